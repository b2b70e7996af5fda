//! NIfTI-1 header decoding/encoding (348-byte fixed layout, both byte orders).

use crate::error::{Error, Result};
use crate::geom::Affine4;

pub const HEADER_SIZE: usize = 348;
/// Data offset we write: header + 4 zero extension-flag bytes.
pub const DEFAULT_VOX_OFFSET: usize = 352;

pub const MAGIC_SINGLE: [u8; 4] = *b"n+1\0";
pub const MAGIC_DETACHED: [u8; 4] = *b"ni1\0";

/// Field byte offsets within the 348-byte header.
mod off {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const INTENT_CODE: usize = 68;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const DESCRIP: usize = 148;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QUATERN_C: usize = 260;
    pub const QUATERN_D: usize = 264;
    pub const QOFFSET_X: usize = 268;
    pub const QOFFSET_Y: usize = 272;
    pub const QOFFSET_Z: usize = 276;
    pub const SROW_X: usize = 280;
    pub const SROW_Y: usize = 296;
    pub const SROW_Z: usize = 312;
    pub const MAGIC: usize = 344;
}

/// Supported on-disk element types.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    Int8,
    UInt8,
    Int16,
    UInt16,
    Int32,
    Float32,
    Float64,
}

impl DataType {
    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(DataType::UInt8),
            4 => Ok(DataType::Int16),
            8 => Ok(DataType::Int32),
            16 => Ok(DataType::Float32),
            64 => Ok(DataType::Float64),
            256 => Ok(DataType::Int8),
            512 => Ok(DataType::UInt16),
            other => Err(Error::UnsupportedDatatype(other)),
        }
    }

    pub fn code(self) -> i16 {
        match self {
            DataType::UInt8 => 2,
            DataType::Int16 => 4,
            DataType::Int32 => 8,
            DataType::Float32 => 16,
            DataType::Float64 => 64,
            DataType::Int8 => 256,
            DataType::UInt16 => 512,
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            DataType::Int8 | DataType::UInt8 => 1,
            DataType::Int16 | DataType::UInt16 => 2,
            DataType::Int32 | DataType::Float32 => 4,
            DataType::Float64 => 8,
        }
    }

    pub fn is_integer(self) -> bool {
        !matches!(self, DataType::Float32 | DataType::Float64)
    }
}

/// Decoded NIfTI-1 header. Only the fields the pipeline consumes are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub datatype: DataType,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub descrip: [u8; 80],
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow_x: [f32; 4],
    pub srow_y: [f32; 4],
    pub srow_z: [f32; 4],
    pub intent_code: i16,
    pub magic: [u8; 4],
    /// True when the file was stored in the non-native byte order.
    pub swapped: bool,
}

impl Default for NiftiHeader {
    fn default() -> Self {
        NiftiHeader {
            dim: [3, 1, 1, 1, 1, 1, 1, 1],
            datatype: DataType::Float32,
            bitpix: 32,
            pixdim: [1.0; 8],
            vox_offset: DEFAULT_VOX_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            descrip: [0u8; 80],
            qform_code: 0,
            sform_code: 0,
            quatern: [0.0; 3],
            qoffset: [0.0; 3],
            srow_x: [0.0; 4],
            srow_y: [0.0; 4],
            srow_z: [0.0; 4],
            intent_code: 0,
            magic: MAGIC_SINGLE,
            swapped: false,
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    swap: bool,
}

impl<'a> Reader<'a> {
    fn i16(&self, at: usize) -> i16 {
        let raw = [self.bytes[at], self.bytes[at + 1]];
        if self.swap {
            i16::from_ne_bytes([raw[1], raw[0]])
        } else {
            i16::from_ne_bytes(raw)
        }
    }

    fn i32(&self, at: usize) -> i32 {
        let mut raw = [0u8; 4];
        raw.copy_from_slice(&self.bytes[at..at + 4]);
        if self.swap {
            raw.reverse();
        }
        i32::from_ne_bytes(raw)
    }

    fn f32(&self, at: usize) -> f32 {
        let mut raw = [0u8; 4];
        raw.copy_from_slice(&self.bytes[at..at + 4]);
        if self.swap {
            raw.reverse();
        }
        f32::from_ne_bytes(raw)
    }
}

/// Decode a 348-byte NIfTI-1 header, detecting byte order from `sizeof_hdr`.
pub fn decode_header(bytes: &[u8]) -> Result<NiftiHeader> {
    if bytes.len() != HEADER_SIZE {
        return Err(Error::WrongSize(bytes.len()));
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[off::MAGIC..off::MAGIC + 4]);
    if magic == MAGIC_DETACHED {
        return Err(Error::DetachedHeader);
    }
    if magic != MAGIC_SINGLE {
        return Err(Error::BadMagic(magic));
    }

    let native = Reader { bytes, swap: false };
    let swap = match native.i32(off::SIZEOF_HDR) {
        348 => false,
        other => {
            let swapped = Reader { bytes, swap: true };
            if swapped.i32(off::SIZEOF_HDR) == 348 {
                true
            } else {
                return Err(Error::WrongSize(other.max(0) as usize));
            }
        }
    };
    let r = Reader { bytes, swap };

    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = r.i16(off::DIM + 2 * i);
    }
    let rank = dim[0];
    if !(1..=7).contains(&rank) {
        return Err(Error::GridMismatch(format!("dim[0] = {rank} out of [1,7]")));
    }
    for d in dim[1..=rank as usize].iter() {
        if *d < 1 {
            return Err(Error::GridMismatch(format!("non-positive extent {d}")));
        }
    }

    let datatype = DataType::from_code(r.i16(off::DATATYPE))?;
    let mut pixdim = [0.0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = r.f32(off::PIXDIM + 4 * i);
    }
    let mut descrip = [0u8; 80];
    descrip.copy_from_slice(&bytes[off::DESCRIP..off::DESCRIP + 80]);

    let mut srow_x = [0.0f32; 4];
    let mut srow_y = [0.0f32; 4];
    let mut srow_z = [0.0f32; 4];
    for i in 0..4 {
        srow_x[i] = r.f32(off::SROW_X + 4 * i);
        srow_y[i] = r.f32(off::SROW_Y + 4 * i);
        srow_z[i] = r.f32(off::SROW_Z + 4 * i);
    }

    Ok(NiftiHeader {
        dim,
        datatype,
        bitpix: r.i16(off::BITPIX),
        pixdim,
        vox_offset: r.f32(off::VOX_OFFSET),
        scl_slope: r.f32(off::SCL_SLOPE),
        scl_inter: r.f32(off::SCL_INTER),
        descrip,
        qform_code: r.i16(off::QFORM_CODE),
        sform_code: r.i16(off::SFORM_CODE),
        quatern: [
            r.f32(off::QUATERN_B),
            r.f32(off::QUATERN_C),
            r.f32(off::QUATERN_D),
        ],
        qoffset: [
            r.f32(off::QOFFSET_X),
            r.f32(off::QOFFSET_Y),
            r.f32(off::QOFFSET_Z),
        ],
        srow_x,
        srow_y,
        srow_z,
        intent_code: r.i16(off::INTENT_CODE),
        magic,
        swapped: swap,
    })
}

/// Serialize a header in native byte order.
pub fn encode_header(h: &NiftiHeader) -> [u8; HEADER_SIZE] {
    let mut b = [0u8; HEADER_SIZE];
    let put_i16 = |b: &mut [u8; HEADER_SIZE], at: usize, v: i16| {
        b[at..at + 2].copy_from_slice(&v.to_ne_bytes());
    };
    let put_i32 = |b: &mut [u8; HEADER_SIZE], at: usize, v: i32| {
        b[at..at + 4].copy_from_slice(&v.to_ne_bytes());
    };
    let put_f32 = |b: &mut [u8; HEADER_SIZE], at: usize, v: f32| {
        b[at..at + 4].copy_from_slice(&v.to_ne_bytes());
    };

    put_i32(&mut b, off::SIZEOF_HDR, 348);
    // "regular" flag, conventionally 'r'
    b[38] = b'r';
    for i in 0..8 {
        put_i16(&mut b, off::DIM + 2 * i, h.dim[i]);
    }
    put_i16(&mut b, off::INTENT_CODE, h.intent_code);
    put_i16(&mut b, off::DATATYPE, h.datatype.code());
    put_i16(&mut b, off::BITPIX, h.bitpix);
    for i in 0..8 {
        put_f32(&mut b, off::PIXDIM + 4 * i, h.pixdim[i]);
    }
    put_f32(&mut b, off::VOX_OFFSET, h.vox_offset);
    put_f32(&mut b, off::SCL_SLOPE, h.scl_slope);
    put_f32(&mut b, off::SCL_INTER, h.scl_inter);
    b[off::DESCRIP..off::DESCRIP + 80].copy_from_slice(&h.descrip);
    put_i16(&mut b, off::QFORM_CODE, h.qform_code);
    put_i16(&mut b, off::SFORM_CODE, h.sform_code);
    put_f32(&mut b, off::QUATERN_B, h.quatern[0]);
    put_f32(&mut b, off::QUATERN_C, h.quatern[1]);
    put_f32(&mut b, off::QUATERN_D, h.quatern[2]);
    put_f32(&mut b, off::QOFFSET_X, h.qoffset[0]);
    put_f32(&mut b, off::QOFFSET_Y, h.qoffset[1]);
    put_f32(&mut b, off::QOFFSET_Z, h.qoffset[2]);
    for i in 0..4 {
        put_f32(&mut b, off::SROW_X + 4 * i, h.srow_x[i]);
        put_f32(&mut b, off::SROW_Y + 4 * i, h.srow_y[i]);
        put_f32(&mut b, off::SROW_Z + 4 * i, h.srow_z[i]);
    }
    b[off::MAGIC..off::MAGIC + 4].copy_from_slice(&h.magic);
    b
}

/// Voxel-to-world affine: sform wins, then qform, then pixdim scaling.
pub fn affine_from_header(h: &NiftiHeader) -> Result<Affine4> {
    if h.sform_code > 0 {
        let mut m = Affine4::identity();
        for c in 0..4 {
            m.m[0][c] = h.srow_x[c] as f64;
            m.m[1][c] = h.srow_y[c] as f64;
            m.m[2][c] = h.srow_z[c] as f64;
        }
        return Ok(m);
    }
    if h.qform_code > 0 {
        let b = h.quatern[0] as f64;
        let c = h.quatern[1] as f64;
        let d = h.quatern[2] as f64;
        let sq = b * b + c * c + d * d;
        if sq > 1.0 + 1e-5 {
            return Err(Error::InvalidQuaternion(sq));
        }
        let a = (1.0 - sq).max(0.0).sqrt();
        let qfac = if h.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let sx = h.pixdim[1] as f64;
        let sy = h.pixdim[2] as f64;
        let sz = h.pixdim[3] as f64 * qfac;
        let rot = [
            [
                a * a + b * b - c * c - d * d,
                2.0 * (b * c - a * d),
                2.0 * (b * d + a * c),
            ],
            [
                2.0 * (b * c + a * d),
                a * a + c * c - b * b - d * d,
                2.0 * (c * d - a * b),
            ],
            [
                2.0 * (b * d - a * c),
                2.0 * (c * d + a * b),
                a * a + d * d - b * b - c * c,
            ],
        ];
        let linear = [
            [rot[0][0] * sx, rot[0][1] * sy, rot[0][2] * sz],
            [rot[1][0] * sx, rot[1][1] * sy, rot[1][2] * sz],
            [rot[2][0] * sx, rot[2][1] * sy, rot[2][2] * sz],
        ];
        return Ok(Affine4::from_parts(
            linear,
            [h.qoffset[0] as f64, h.qoffset[1] as f64, h.qoffset[2] as f64],
        ));
    }
    Ok(Affine4::from_diagonal(
        [
            h.pixdim[1].abs() as f64,
            h.pixdim[2].abs() as f64,
            h.pixdim[3].abs() as f64,
        ],
        [0.0; 3],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valid_bytes() -> [u8; HEADER_SIZE] {
        let mut h = NiftiHeader::default();
        h.dim = [3, 4, 5, 6, 1, 1, 1, 1];
        h.pixdim = [1.0, 0.5, 0.5, 0.7, 1.0, 1.0, 1.0, 1.0];
        encode_header(&h)
    }

    #[test]
    fn decode_native() {
        let b = valid_bytes();
        let h = decode_header(&b).unwrap();
        assert_eq!(h.dim[0], 3);
        assert_eq!(h.dim[1..4], [4, 5, 6]);
        assert!(!h.swapped);
        assert_eq!(h.datatype, DataType::Float32);
    }

    #[test]
    fn decode_swapped_matches_native() {
        let b = valid_bytes();
        let native = decode_header(&b).unwrap();
        let mut sw = b;
        // Byte-swap every numeric field in place; magic/descrip are raw bytes.
        let swap2 = |bytes: &mut [u8; HEADER_SIZE], at: usize| bytes.swap(at, at + 1);
        let swap4 = |bytes: &mut [u8; HEADER_SIZE], at: usize| {
            bytes.swap(at, at + 3);
            bytes.swap(at + 1, at + 2);
        };
        swap4(&mut sw, 0);
        for i in 0..8 {
            swap2(&mut sw, 40 + 2 * i);
        }
        swap2(&mut sw, 68);
        swap2(&mut sw, 70);
        swap2(&mut sw, 72);
        for i in 0..8 {
            swap4(&mut sw, 76 + 4 * i);
        }
        swap4(&mut sw, 108);
        swap4(&mut sw, 112);
        swap4(&mut sw, 116);
        swap2(&mut sw, 252);
        swap2(&mut sw, 254);
        for at in (256..280).step_by(4) {
            swap4(&mut sw, at);
        }
        for at in (280..328).step_by(4) {
            swap4(&mut sw, at);
        }
        let swapped = decode_header(&sw).unwrap();
        assert!(swapped.swapped);
        assert_eq!(swapped.dim, native.dim);
        assert_eq!(swapped.pixdim, native.pixdim);
        assert_eq!(swapped.datatype, native.datatype);
        assert_eq!(swapped.vox_offset, native.vox_offset);
    }

    #[test]
    fn wrong_length_rejected() {
        assert!(matches!(
            decode_header(&[0u8; 200]),
            Err(Error::WrongSize(200))
        ));
    }

    #[test]
    fn bad_magic_rejected() {
        let mut b = valid_bytes();
        b[344..348].copy_from_slice(b"xxxx");
        assert!(matches!(decode_header(&b), Err(Error::BadMagic(_))));
    }

    #[test]
    fn detached_rejected() {
        let mut b = valid_bytes();
        b[344..348].copy_from_slice(&MAGIC_DETACHED);
        assert!(matches!(decode_header(&b), Err(Error::DetachedHeader)));
    }

    #[test]
    fn unsupported_datatype_rejected() {
        let mut h = NiftiHeader::default();
        h.dim = [3, 2, 2, 2, 1, 1, 1, 1];
        let mut b = encode_header(&h);
        // datatype 32 = complex64, unsupported
        b[70..72].copy_from_slice(&32i16.to_ne_bytes());
        assert!(matches!(
            decode_header(&b),
            Err(Error::UnsupportedDatatype(32))
        ));
    }

    #[test]
    fn sform_affine_copied_exactly() {
        let mut h = NiftiHeader::default();
        h.sform_code = 1;
        h.srow_x = [0.5, 0.0, 0.0, -80.0];
        h.srow_y = [0.0, 0.5, 0.0, -80.0];
        h.srow_z = [0.0, 0.0, 0.7, -40.0];
        let a = affine_from_header(&h).unwrap();
        // exact copy rule: entries equal the stored f32 srow values
        assert_eq!(a.m[0], [0.5f32 as f64, 0.0, 0.0, -80.0]);
        assert_eq!(a.m[1], [0.0, 0.5f32 as f64, 0.0, -80.0]);
        assert_eq!(a.m[2], [0.0, 0.0, 0.7f32 as f64, -40.0]);
        assert_eq!(a.m[3], [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn identity_quaternion_gives_identity() {
        let mut h = NiftiHeader::default();
        h.qform_code = 1;
        h.pixdim = [1.0; 8];
        let a = affine_from_header(&h).unwrap();
        assert!(a.approx_eq(&Affine4::identity(), 1e-12));
    }

    #[test]
    fn quaternion_z_rotation_matches_oracle() {
        // b=0, c=0, d=sqrt(0.5): 90 degree rotation around z.
        let mut h = NiftiHeader::default();
        h.qform_code = 1;
        h.quatern = [0.0, 0.0, (0.5f64).sqrt() as f32];
        h.pixdim = [1.0; 8];
        let a = affine_from_header(&h).unwrap();
        // Independent oracle: rotate basis vectors via the quaternion sandwich
        // product q * p * q^-1 evaluated longhand.
        let q = [(0.5f64).sqrt(), 0.0, 0.0, (0.5f64).sqrt()]; // (w,x,y,z)
        let rotate = |p: [f64; 3]| -> [f64; 3] {
            let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
            // t = 2 q_vec x p ; p' = p + w t + q_vec x t
            let qv = [x, y, z];
            let t = [
                2.0 * (qv[1] * p[2] - qv[2] * p[1]),
                2.0 * (qv[2] * p[0] - qv[0] * p[2]),
                2.0 * (qv[0] * p[1] - qv[1] * p[0]),
            ];
            [
                p[0] + w * t[0] + qv[1] * t[2] - qv[2] * t[1],
                p[1] + w * t[1] + qv[2] * t[0] - qv[0] * t[2],
                p[2] + w * t[2] + qv[0] * t[1] - qv[1] * t[0],
            ]
        };
        for (i, e) in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
            .into_iter()
            .enumerate()
        {
            let expect = rotate(e);
            let got = a.column(i);
            for k in 0..3 {
                assert!(
                    (got[k] - expect[k]).abs() < 1e-6,
                    "column {i}: {got:?} vs {expect:?}"
                );
            }
        }
    }

    #[test]
    fn invalid_quaternion_rejected() {
        let mut h = NiftiHeader::default();
        h.qform_code = 1;
        h.quatern = [0.8, 0.8, 0.8];
        assert!(matches!(
            affine_from_header(&h),
            Err(Error::InvalidQuaternion(_))
        ));
    }

    #[test]
    fn sform_wins_over_qform() {
        let mut h = NiftiHeader::default();
        h.sform_code = 1;
        h.qform_code = 1;
        h.srow_x = [2.0, 0.0, 0.0, 1.0];
        h.srow_y = [0.0, 2.0, 0.0, 2.0];
        h.srow_z = [0.0, 0.0, 2.0, 3.0];
        h.quatern = [0.0, 0.0, (0.5f64).sqrt() as f32]; // conflicting qform
        h.pixdim = [1.0; 8];
        let a = affine_from_header(&h).unwrap();
        assert_eq!(a.m[0][0], 2.0);
        assert_eq!(a.m[0][3], 1.0);
    }
}
