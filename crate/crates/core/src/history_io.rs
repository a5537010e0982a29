//! On-disk format for `HistoryStore`: magic "FUHS", u32 version, u64 config
//! fingerprint, u32 record count; each record is a u32 round index, the
//! global-before `ParamVector` blob, a u32 client count, then per client a
//! u32 id, u32 sample count, and the delta blob. Little-endian throughout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::fedsim::{ClientUpdate, HistoryStore, RoundRecord};
use crate::params_io::{read_params, write_params};

const MAGIC: &[u8; 4] = b"FUHS";
const VERSION: u32 = 1;

pub fn write_history<W: Write>(writer: &mut W, store: &HistoryStore) -> std::io::Result<()> {
    writer.write_all(MAGIC)?;
    writer.write_u32::<LittleEndian>(VERSION)?;
    writer.write_u64::<LittleEndian>(store.fingerprint)?;
    writer.write_u32::<LittleEndian>(store.records.len() as u32)?;
    for record in &store.records {
        writer.write_u32::<LittleEndian>(record.round_index as u32)?;
        write_params(writer, &record.global_before)?;
        writer.write_u32::<LittleEndian>(record.updates.len() as u32)?;
        for update in &record.updates {
            writer.write_u32::<LittleEndian>(update.client_id as u32)?;
            writer.write_u32::<LittleEndian>(update.sample_count as u32)?;
            write_params(writer, &update.delta)?;
        }
    }
    Ok(())
}

pub fn read_history<R: Read>(reader: &mut R) -> Result<HistoryStore> {
    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|_| Error::format("truncated history file"))?;
    if &magic != MAGIC {
        return Err(Error::format("bad magic, expected FUHS"));
    }
    let trunc = |_| Error::format("truncated history file");
    let version = reader.read_u32::<LittleEndian>().map_err(trunc)?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported FUHS version {version}")));
    }
    let fingerprint = reader.read_u64::<LittleEndian>().map_err(trunc)?;
    let record_count = reader.read_u32::<LittleEndian>().map_err(trunc)?;
    let mut records = Vec::with_capacity(record_count as usize);
    let mut last_round: Option<usize> = None;
    for _ in 0..record_count {
        let round_index = reader.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        if let Some(prev) = last_round {
            if round_index <= prev {
                return Err(Error::format("history rounds must strictly increase"));
            }
        }
        last_round = Some(round_index);
        let global_before = read_params(reader)?;
        let client_count = reader.read_u32::<LittleEndian>().map_err(trunc)?;
        let mut updates = Vec::with_capacity(client_count as usize);
        for _ in 0..client_count {
            let client_id = reader.read_u32::<LittleEndian>().map_err(trunc)? as usize;
            let sample_count = reader.read_u32::<LittleEndian>().map_err(trunc)? as usize;
            let delta = read_params(reader)?;
            updates.push(ClientUpdate {
                client_id,
                sample_count,
                delta,
            });
        }
        records.push(RoundRecord {
            round_index,
            global_before,
            updates,
        });
    }
    Ok(HistoryStore {
        fingerprint,
        records,
    })
}

pub fn save_history(path: &Path, store: &HistoryStore) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    write_history(&mut writer, store).map_err(|e| Error::io(path, e))
}

pub fn load_history(path: &Path) -> Result<HistoryStore> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_history(&mut BufReader::new(file))
}
