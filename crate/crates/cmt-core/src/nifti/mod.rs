//! NIfTI-1 reading and writing.

mod header;
mod io;

pub use header::{
    affine_from_header, decode_header, encode_header, DataType, NiftiHeader, DEFAULT_VOX_OFFSET,
    HEADER_SIZE, MAGIC_SINGLE,
};
pub use io::{
    read_label_map, read_vector_field, read_volume, write_label_map, write_vector_field,
    write_volume,
};
