//! Reading and writing NIfTI-1 volumes (.nii / .nii.gz) and 4D vector fields.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::header::{
    affine_from_header, decode_header, encode_header, DataType, NiftiHeader, DEFAULT_VOX_OFFSET,
    HEADER_SIZE,
};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::volume::{ImageVolume, LabelMap, LabelSchema};

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

fn read_all_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if raw.len() >= 2 && raw[0..2] == GZIP_MAGIC {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn write_all_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let compress = path
        .to_string_lossy()
        .to_ascii_lowercase()
        .ends_with(".gz");
    let payload = if compress {
        // mtime defaults to 0: output bytes depend only on content
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes)
            .and_then(|_| enc.finish())
            .map_err(|e| Error::io(path.display().to_string(), e))?
    } else {
        bytes.to_vec()
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
        }
    }
    std::fs::write(path, payload).map_err(|e| Error::io(path.display().to_string(), e))
}

struct RawVolume {
    header: NiftiHeader,
    grid: Grid,
    /// Element values with scl_slope/scl_inter applied, x-fastest order.
    values: Vec<f64>,
    extent4: usize,
}

fn decode_file(path: &Path) -> Result<RawVolume> {
    let bytes = read_all_bytes(path)?;
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Truncated {
            expected: HEADER_SIZE,
            got: bytes.len(),
        });
    }
    let header = decode_header(&bytes[..HEADER_SIZE])?;
    let rank = header.dim[0] as usize;
    if !(3..=5).contains(&rank) {
        return Err(Error::GridMismatch(format!(
            "expected a 3D volume or 4D field, got rank {rank}"
        )));
    }
    let ext = [
        header.dim[1] as usize,
        header.dim[2] as usize,
        header.dim[3] as usize,
    ];
    let mut extent4 = 1usize;
    for d in header.dim[4..=rank.min(7) as usize].iter() {
        extent4 *= (*d).max(1) as usize;
    }
    let n = ext[0] * ext[1] * ext[2] * extent4;
    let elem = header.datatype.size_bytes();
    let offset = header.vox_offset.max(HEADER_SIZE as f32) as usize;
    let expected = offset + n * elem;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected: n * elem,
            got: bytes.len().saturating_sub(offset),
        });
    }
    let data = &bytes[offset..offset + n * elem];
    let swap = header.swapped;
    let mut values = Vec::with_capacity(n);
    let get = |chunk: &[u8], size: usize| -> [u8; 8] {
        let mut b = [0u8; 8];
        b[..size].copy_from_slice(chunk);
        if swap {
            b[..size].reverse();
        }
        b
    };
    match header.datatype {
        DataType::UInt8 => values.extend(data.iter().map(|&v| v as f64)),
        DataType::Int8 => values.extend(data.iter().map(|&v| v as i8 as f64)),
        DataType::Int16 => {
            for c in data.chunks_exact(2) {
                let b = get(c, 2);
                values.push(i16::from_ne_bytes([b[0], b[1]]) as f64);
            }
        }
        DataType::UInt16 => {
            for c in data.chunks_exact(2) {
                let b = get(c, 2);
                values.push(u16::from_ne_bytes([b[0], b[1]]) as f64);
            }
        }
        DataType::Int32 => {
            for c in data.chunks_exact(4) {
                let b = get(c, 4);
                values.push(i32::from_ne_bytes([b[0], b[1], b[2], b[3]]) as f64);
            }
        }
        DataType::Float32 => {
            for c in data.chunks_exact(4) {
                let b = get(c, 4);
                values.push(f32::from_ne_bytes([b[0], b[1], b[2], b[3]]) as f64);
            }
        }
        DataType::Float64 => {
            for c in data.chunks_exact(8) {
                let b = get(c, 8);
                values.push(f64::from_ne_bytes(b));
            }
        }
    }
    // scl_slope == 0 means "no scaling" by convention
    if header.scl_slope != 0.0 && (header.scl_slope != 1.0 || header.scl_inter != 0.0) {
        let slope = header.scl_slope as f64;
        let inter = header.scl_inter as f64;
        for v in values.iter_mut() {
            *v = *v * slope + inter;
        }
    }
    let affine = affine_from_header(&header)?;
    let spacing = affine.column_norms();
    let grid = Grid {
        extents: ext,
        spacing,
        affine,
    };
    grid.validate()?;
    Ok(RawVolume {
        header,
        grid,
        values,
        extent4,
    })
}

/// Read a 3D scalar volume; gzip is detected from the file magic bytes.
pub fn read_volume(path: &Path) -> Result<(ImageVolume, NiftiHeader)> {
    let raw = decode_file(path)?;
    if raw.extent4 != 1 {
        return Err(Error::GridMismatch(format!(
            "expected a 3D volume, file has {} values per voxel",
            raw.extent4
        )));
    }
    let data: Vec<f32> = raw.values.iter().map(|&v| v as f32).collect();
    Ok((ImageVolume::new(raw.grid, data)?, raw.header))
}

/// Read an integer label volume, normalizing any supported integer type to u8.
pub fn read_label_map(path: &Path, schema: LabelSchema) -> Result<(LabelMap, NiftiHeader)> {
    let raw = decode_file(path)?;
    if raw.extent4 != 1 {
        return Err(Error::GridMismatch("label map must be 3D".into()));
    }
    let mut data = Vec::with_capacity(raw.values.len());
    for &v in &raw.values {
        let rounded = v.round();
        if (v - rounded).abs() > 1e-6 || !(0.0..=255.0).contains(&rounded) {
            return Err(Error::LabelOutOfRange(v as i64));
        }
        data.push(rounded as u8);
    }
    Ok((LabelMap::new(raw.grid, data, schema)?, raw.header))
}

fn header_for_grid(grid: &Grid, datatype: DataType, rank4: Option<usize>) -> NiftiHeader {
    let mut h = NiftiHeader {
        datatype,
        bitpix: (datatype.size_bytes() * 8) as i16,
        vox_offset: DEFAULT_VOX_OFFSET as f32,
        scl_slope: 1.0,
        scl_inter: 0.0,
        sform_code: 1,
        qform_code: 0,
        ..NiftiHeader::default()
    };
    match rank4 {
        None => {
            h.dim = [3, 0, 0, 0, 1, 1, 1, 1];
        }
        Some(k) => {
            h.dim = [5, 0, 0, 0, 1, k as i16, 1, 1];
            h.intent_code = 1007; // vector-valued voxels
        }
    }
    for a in 0..3 {
        h.dim[1 + a] = grid.extents[a] as i16;
        h.pixdim[1 + a] = grid.spacing[a] as f32;
    }
    h.pixdim[0] = 1.0;
    for c in 0..4 {
        h.srow_x[c] = grid.affine.m[0][c] as f32;
        h.srow_y[c] = grid.affine.m[1][c] as f32;
        h.srow_z[c] = grid.affine.m[2][c] as f32;
    }
    h
}

fn write_payload(path: &Path, header: &NiftiHeader, body: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(DEFAULT_VOX_OFFSET + body.len());
    bytes.extend_from_slice(&encode_header(header));
    bytes.extend_from_slice(&[0u8; DEFAULT_VOX_OFFSET - HEADER_SIZE]);
    bytes.extend_from_slice(body);
    write_all_bytes(path, &bytes)
}

/// Write a scalar volume as float32; sform carries the affine, qform_code is 0.
pub fn write_volume(volume: &ImageVolume, path: &Path) -> Result<()> {
    if !volume.data.iter().all(|v| v.is_finite()) {
        return Err(Error::RejectedNonFinite);
    }
    let header = header_for_grid(&volume.grid, DataType::Float32, None);
    let mut body = Vec::with_capacity(volume.data.len() * 4);
    for v in &volume.data {
        body.extend_from_slice(&v.to_ne_bytes());
    }
    write_payload(path, &header, &body)
}

/// Write a label map as uint8.
pub fn write_label_map(labels: &LabelMap, path: &Path) -> Result<()> {
    let header = header_for_grid(&labels.grid, DataType::UInt8, None);
    write_payload(path, &header, &labels.data)
}

/// Write a per-voxel 3-vector field (forward/inverse deformations or
/// velocities) as a float32 NIfTI with a trailing 3-component axis.
/// Components are in voxel units of the field's grid.
pub fn write_vector_field(grid: &Grid, data: &[[f64; 3]], descrip: &str, path: &Path) -> Result<()> {
    if data.len() != grid.num_voxels() {
        return Err(Error::GridMismatch("field length".into()));
    }
    let mut header = header_for_grid(grid, DataType::Float32, Some(3));
    let text = descrip.as_bytes();
    let n = text.len().min(79);
    header.descrip[..n].copy_from_slice(&text[..n]);
    // component-major planes: all of c0, then c1, c2
    let mut body = Vec::with_capacity(data.len() * 12);
    for comp in 0..3 {
        for v in data {
            body.extend_from_slice(&(v[comp] as f32).to_ne_bytes());
        }
    }
    write_payload(path, &header, &body)
}

/// Read a 3-component vector field written by `write_vector_field`.
pub fn read_vector_field(path: &Path) -> Result<(Grid, Vec<[f64; 3]>)> {
    let raw = decode_file(path)?;
    if raw.extent4 != 3 {
        return Err(Error::GridMismatch(format!(
            "expected 3 components per voxel, got {}",
            raw.extent4
        )));
    }
    let n = raw.grid.num_voxels();
    let mut out = vec![[0.0f64; 3]; n];
    for comp in 0..3 {
        for i in 0..n {
            out[i][comp] = raw.values[comp * n + i];
        }
    }
    Ok((raw.grid, out))
}
