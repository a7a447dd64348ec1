//! Binary dataset files.
//!
//! Layout, little-endian: magic `ODLD`, version `u32`, record count `u32`,
//! `K`, `N`, `M` as `u32`, scenario tag (`u32` length + UTF-8), then
//! fixed-size records: SNR `f64`, seed `u64`, and the `H`, `X`, `Y` grids,
//! each as a real plane followed by an imaginary plane of `K·N` `f64`s.
//! `Y` is exactly regenerable from `(H, X, seed, SNR)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use super::parallel::parallel_map;
use super::{frame_seed, snr_for_index, Link};
use crate::error::{Error, Result};
use crate::ofdm::FrameGrid;

pub const DATASET_MAGIC: [u8; 4] = *b"ODLD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetHeader {
    pub count: u32,
    pub subcarriers: u32,
    pub slots: u32,
    pub modulation: u32,
    pub scenario: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub snr_db: f64,
    pub seed: u64,
    pub h: FrameGrid,
    pub x: FrameGrid,
    pub y: FrameGrid,
}

impl DatasetRecord {
    /// Recomputes `Y` from the stored channel, transmit grid, seed and SNR.
    pub fn regenerate_y(&self, link: &Link) -> Result<FrameGrid> {
        Ok(link.receive(&self.h, &self.x, self.seed, self.snr_db)?.0)
    }
}

fn write_grid(w: &mut impl Write, g: &FrameGrid) -> Result<()> {
    for z in g.as_slice() {
        w.write_all(&z.re.to_le_bytes())?;
    }
    for z in g.as_slice() {
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r)?))
}

fn read_grid(r: &mut impl Read, k: usize, n: usize) -> Result<FrameGrid> {
    let mut buf = vec![0u8; 16 * k * n];
    r.read_exact(&mut buf)?;
    let vals: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let m = k * n;
    FrameGrid::from_vec(k, n, (0..m).map(|i| Complex64::new(vals[i], vals[m + i])).collect())
}

impl DatasetHeader {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&DATASET_MAGIC)?;
        for v in [DATASET_VERSION, self.count, self.subcarriers, self.slots, self.modulation] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.scenario.len() as u32).to_le_bytes())?;
        w.write_all(self.scenario.as_bytes())?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        if read_exact::<4>(r)? != DATASET_MAGIC {
            return Err(Error::Format("not a dataset file (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let count = read_u32(r)?;
        let subcarriers = read_u32(r)?;
        let slots = read_u32(r)?;
        let modulation = read_u32(r)?;
        let len = read_u32(r)? as usize;
        let mut tag = vec![0u8; len];
        r.read_exact(&mut tag)?;
        let scenario = String::from_utf8(tag).map_err(|_| Error::Format("scenario tag is not UTF-8".into()))?;
        Ok(Self {
            count,
            subcarriers,
            slots,
            modulation,
            scenario,
        })
    }
}

pub fn write_record(w: &mut impl Write, rec: &DatasetRecord) -> Result<()> {
    w.write_all(&rec.snr_db.to_le_bytes())?;
    w.write_all(&rec.seed.to_le_bytes())?;
    write_grid(w, &rec.h)?;
    write_grid(w, &rec.x)?;
    write_grid(w, &rec.y)
}

pub fn read_record(r: &mut impl Read, header: &DatasetHeader) -> Result<DatasetRecord> {
    let (k, n) = (header.subcarriers as usize, header.slots as usize);
    let snr_db = f64::from_le_bytes(read_exact(r)?);
    let seed = u64::from_le_bytes(read_exact(r)?);
    Ok(DatasetRecord {
        snr_db,
        seed,
        h: read_grid(r, k, n)?,
        x: read_grid(r, k, n)?,
        y: read_grid(r, k, n)?,
    })
}

/// Records generated per parallel block; bounds memory for large files.
const BLOCK: usize = 256;

/// Streams `count` frames to `w`, split evenly over `snr_mix`. Record `i`
/// uses frame seed `frame_seed(seed, i)`.
pub fn write_dataset(w: &mut impl Write, link: &Link, count: usize, snr_mix: &[f64], seed: u64) -> Result<DatasetHeader> {
    if count == 0 || snr_mix.is_empty() {
        return Err(Error::InvalidArgument("dataset needs at least one record and one SNR".into()));
    }
    let header = DatasetHeader {
        count: u32::try_from(count).map_err(|_| Error::InvalidArgument("record count exceeds u32".into()))?,
        subcarriers: link.config.subcarriers as u32,
        slots: link.config.slots as u32,
        modulation: link.config.modulation as u32,
        scenario: link.scenario_tag().to_string(),
    };
    header.write_to(w)?;
    for start in (0..count).step_by(BLOCK) {
        let len = BLOCK.min(count - start);
        let recs = parallel_map(len, |j| {
            let i = start + j;
            let f = link.frame(frame_seed(seed, i as u64), snr_for_index(snr_mix, count, i));
            Ok(DatasetRecord {
                snr_db: f.snr_db,
                seed: f.seed,
                h: f.h,
                x: f.x,
                y: f.y,
            })
        })?;
        for r in &recs {
            write_record(w, r)?;
        }
    }
    Ok(header)
}

/// [`write_dataset`] to a file.
pub fn generate_dataset(
    path: impl AsRef<Path>,
    link: &Link,
    count: usize,
    snr_mix: &[f64],
    seed: u64,
) -> Result<DatasetHeader> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = write_dataset(&mut w, link, count, snr_mix, seed)?;
    w.flush()?;
    Ok(header)
}

/// Iterator over the records of a dataset stream.
pub struct DatasetReader<R: Read> {
    pub header: DatasetHeader,
    inner: R,
    remaining: u32,
}

impl<R: Read> DatasetReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let header = DatasetHeader::read_from(&mut inner)?;
        Ok(Self {
            remaining: header.count,
            header,
            inner,
        })
    }
}

impl DatasetReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<DatasetRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(read_record(&mut self.inner, &self.header))
    }
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<DatasetRecord>)> {
    let reader = DatasetReader::open(path)?;
    let header = reader.header.clone();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}
