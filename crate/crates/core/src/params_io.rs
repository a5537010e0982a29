//! On-disk format for `ParamVector`: magic "FUPV", then a little-endian
//! header (version, arch tag, input_dim, hidden, num_classes, length) and
//! the raw f64 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::models::{Arch, ModelSpec, ParamVector};

const MAGIC: &[u8; 4] = b"FUPV";
const VERSION: u32 = 1;

pub fn write_params<W: Write>(writer: &mut W, params: &ParamVector) -> std::io::Result<()> {
    writer.write_all(MAGIC)?;
    writer.write_u32::<LittleEndian>(VERSION)?;
    let (tag, hidden) = match params.spec.arch {
        Arch::LogReg => (0u32, 0u32),
        Arch::Mlp { hidden } => (1u32, hidden as u32),
    };
    writer.write_u32::<LittleEndian>(tag)?;
    writer.write_u32::<LittleEndian>(params.spec.input_dim as u32)?;
    writer.write_u32::<LittleEndian>(hidden)?;
    writer.write_u32::<LittleEndian>(params.spec.num_classes as u32)?;
    writer.write_u64::<LittleEndian>(params.values.len() as u64)?;
    for &v in &params.values {
        writer.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn read_params<R: Read>(reader: &mut R) -> Result<ParamVector> {
    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|_| Error::format("truncated param file"))?;
    if &magic != MAGIC {
        return Err(Error::format("bad magic, expected FUPV"));
    }
    let trunc = |_| Error::format("truncated param file");
    let version = reader.read_u32::<LittleEndian>().map_err(trunc)?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported FUPV version {version}")));
    }
    let tag = reader.read_u32::<LittleEndian>().map_err(trunc)?;
    let input_dim = reader.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let hidden = reader.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let num_classes = reader.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let len = reader.read_u64::<LittleEndian>().map_err(trunc)? as usize;

    let arch = match tag {
        0 => Arch::LogReg,
        1 => Arch::Mlp { hidden },
        other => return Err(Error::format(format!("unknown arch tag {other}"))),
    };
    let spec = ModelSpec::new(arch, input_dim, num_classes)
        .map_err(|e| Error::format(format!("invalid spec in param file: {e}")))?;
    if len != spec.param_count() {
        return Err(Error::format(format!(
            "declared length {len} does not match spec param count {}",
            spec.param_count()
        )));
    }
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        values.push(reader.read_f64::<LittleEndian>().map_err(trunc)?);
    }
    Ok(ParamVector { spec, values })
}

pub fn save_params(path: &Path, params: &ParamVector) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    write_params(&mut writer, params).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<ParamVector> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_params(&mut BufReader::new(file))
}
