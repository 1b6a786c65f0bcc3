//! Binary checkpoints: everything needed to resume a replication and
//! reproduce the uninterrupted run bit for bit — chain state (position,
//! counter-based stream coordinates), compensated schedule accumulators,
//! and the full measure snapshot. Little-endian throughout; f64 as raw
//! bits, so restored sums are exactly the saved ones.

use std::path::Path;

use orthant_core::measure::{BoundarySnapshot, MeasureConfig, MeasureSnapshot};
use orthant_core::scheme::{ChainSnapshot, ScheduleSnapshot};

use crate::config::CliError;

const MAGIC: &[u8; 4] = b"ORCK";
const VERSION: u32 = 1;

pub struct Checkpoint {
    pub process_hash: u64,
    pub replication: u32,
    pub chain: ChainSnapshot,
    pub schedule: ScheduleSnapshot,
    pub measure: MeasureSnapshot,
    pub boundary: Option<BoundarySnapshot>,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::with_capacity(1 << 16) }
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn pair(&mut self, v: (f64, f64)) {
        self.f64(v.0);
        self.f64(v.1);
    }
    fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        for &x in v {
            self.f64(x);
        }
    }
    fn pairs(&mut self, v: &[(f64, f64)]) {
        self.usize(v.len());
        for &p in v {
            self.pair(p);
        }
    }
    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, at: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        if self.at + n > self.buf.len() {
            return Err("checkpoint truncated".into());
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize, String> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| "length overflows usize".to_string())
    }
    fn len(&mut self) -> Result<usize, String> {
        let n = self.usize()?;
        // Every counted element occupies at least one byte; reject lengths
        // the remaining buffer cannot possibly hold.
        if n > self.buf.len() - self.at {
            return Err("checkpoint length field exceeds file size".into());
        }
        Ok(n)
    }
    fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn pair(&mut self) -> Result<(f64, f64), String> {
        Ok((self.f64()?, self.f64()?))
    }
    fn f64s(&mut self) -> Result<Vec<f64>, String> {
        let n = self.len()?;
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(self.f64()?);
        }
        Ok(v)
    }
    fn pairs(&mut self) -> Result<Vec<(f64, f64)>, String> {
        let n = self.len()?;
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(self.pair()?);
        }
        Ok(v)
    }
    fn str(&mut self) -> Result<String, String> {
        let n = self.len()?;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| "invalid utf-8 in checkpoint".into())
    }
    fn done(&self) -> Result<(), String> {
        if self.at == self.buf.len() {
            Ok(())
        } else {
            Err("trailing bytes after checkpoint payload".into())
        }
    }
}

pub fn encode(cp: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u64(cp.process_hash);
    w.u32(cp.replication);

    // Chain.
    w.u64(cp.chain.k);
    w.f64s(&cp.chain.x);
    w.u64(cp.chain.master_seed);
    w.u64(cp.chain.replication_index);
    w.u64(cp.chain.counter);
    w.u64(cp.chain.truncation_count);

    // Schedule.
    w.u64(cp.schedule.n);
    w.f64(cp.schedule.lambda0);
    w.pair(cp.schedule.lambda_parts);
    w.pair(cp.schedule.lambda_32_parts);
    w.usize(cp.schedule.extra.len());
    for &(alpha, parts) in &cp.schedule.extra {
        w.f64(alpha);
        w.pair(parts);
    }

    // Occupation measure.
    let m = &cp.measure;
    w.usize(m.dim);
    w.usize(m.config.bins);
    w.f64(m.config.x_max);
    w.usize(m.config.reservoir_capacity);
    w.u64(m.config.reservoir_seed);
    w.u64(m.config.reservoir_stream);
    w.u64(m.n);
    w.u64(m.dropped);
    w.pair(m.total);
    w.usize(m.moments.len());
    for coord in &m.moments {
        for &p in coord.iter() {
            w.pair(p);
        }
    }
    w.pairs(&m.cross);
    w.usize(m.hist.len());
    for coord in &m.hist {
        w.pairs(coord);
    }
    w.usize(m.at_edge.len());
    for coord in &m.at_edge {
        w.pairs(coord);
    }
    w.pairs(&m.overflow);
    w.usize(m.sinks.len());
    for (name, parts) in &m.sinks {
        w.str(name);
        w.pair(*parts);
    }
    w.usize(m.reservoir.len());
    for (log_key, x, weight) in &m.reservoir {
        w.f64(*log_key);
        w.f64s(x);
        w.f64(*weight);
    }
    w.u64(m.key_counter);

    // Boundary measure, when the run collects one.
    match &cp.boundary {
        None => w.u32(0),
        Some(b) => {
            w.u32(1);
            w.usize(b.dim);
            w.f64(b.a1);
            w.pairs(&b.masses);
            w.usize(b.sinks.len());
            for (name, accs) in &b.sinks {
                w.str(name);
                w.pairs(accs);
            }
            w.f64(b.k_hat);
            w.u64(b.audit_violations);
            w.u64(b.steps_seen);
            w.u64(b.boundary_steps);
            w.u64(b.dropped);
        }
    }
    w.buf
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, String> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err("not a checkpoint file (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let process_hash = r.u64()?;
    let replication = r.u32()?;

    let chain = ChainSnapshot {
        k: r.u64()?,
        x: r.f64s()?,
        master_seed: r.u64()?,
        replication_index: r.u64()?,
        counter: r.u64()?,
        truncation_count: r.u64()?,
    };

    let n = r.u64()?;
    let lambda0 = r.f64()?;
    let lambda_parts = r.pair()?;
    let lambda_32_parts = r.pair()?;
    let n_extra = r.len()?;
    let mut extra = Vec::with_capacity(n_extra);
    for _ in 0..n_extra {
        let alpha = r.f64()?;
        let parts = r.pair()?;
        extra.push((alpha, parts));
    }
    let schedule = ScheduleSnapshot { n, lambda0, lambda_parts, lambda_32_parts, extra };

    let dim = r.usize()?;
    let config = MeasureConfig {
        bins: r.usize()?,
        x_max: r.f64()?,
        reservoir_capacity: r.usize()?,
        reservoir_seed: r.u64()?,
        reservoir_stream: r.u64()?,
    };
    let m_n = r.u64()?;
    let dropped = r.u64()?;
    let total = r.pair()?;
    let n_coords = r.len()?;
    let mut moments = Vec::with_capacity(n_coords);
    for _ in 0..n_coords {
        let mut coord = [(0.0, 0.0); 4];
        for p in coord.iter_mut() {
            *p = r.pair()?;
        }
        moments.push(coord);
    }
    let cross = r.pairs()?;
    let n_hist = r.len()?;
    let mut hist = Vec::with_capacity(n_hist);
    for _ in 0..n_hist {
        hist.push(r.pairs()?);
    }
    let n_edge = r.len()?;
    let mut at_edge = Vec::with_capacity(n_edge);
    for _ in 0..n_edge {
        at_edge.push(r.pairs()?);
    }
    let overflow = r.pairs()?;
    let n_sinks = r.len()?;
    let mut sinks = Vec::with_capacity(n_sinks);
    for _ in 0..n_sinks {
        let name = r.str()?;
        let parts = r.pair()?;
        sinks.push((name, parts));
    }
    let n_res = r.len()?;
    let mut reservoir = Vec::with_capacity(n_res);
    for _ in 0..n_res {
        let log_key = r.f64()?;
        let x = r.f64s()?;
        let weight = r.f64()?;
        reservoir.push((log_key, x, weight));
    }
    let key_counter = r.u64()?;
    let measure = MeasureSnapshot {
        dim,
        config,
        n: m_n,
        dropped,
        total,
        moments,
        cross,
        hist,
        at_edge,
        overflow,
        sinks,
        reservoir,
        key_counter,
    };

    let boundary = match r.u32()? {
        0 => None,
        1 => {
            let dim = r.usize()?;
            let a1 = r.f64()?;
            let masses = r.pairs()?;
            let n_sinks = r.len()?;
            let mut sinks = Vec::with_capacity(n_sinks);
            for _ in 0..n_sinks {
                let name = r.str()?;
                let accs = r.pairs()?;
                sinks.push((name, accs));
            }
            Some(BoundarySnapshot {
                dim,
                a1,
                masses,
                sinks,
                k_hat: r.f64()?,
                audit_violations: r.u64()?,
                steps_seen: r.u64()?,
                boundary_steps: r.u64()?,
                dropped: r.u64()?,
            })
        }
        other => return Err(format!("bad boundary flag {other}")),
    };

    r.done()?;
    Ok(Checkpoint { process_hash, replication, chain, schedule, measure, boundary })
}

pub fn checkpoint_path(dir: &Path, replication: u32) -> std::path::PathBuf {
    dir.join(format!("checkpoint_rep{replication:04}.bin"))
}

pub fn save(dir: &Path, cp: &Checkpoint) -> Result<(), CliError> {
    let path = checkpoint_path(dir, cp.replication);
    let tmp = path.with_extension("bin.tmp");
    std::fs::write(&tmp, encode(cp))
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, &path)
        .map_err(|e| CliError::Runtime(format!("renaming checkpoint: {e}")))?;
    Ok(())
}

pub fn load(dir: &Path, replication: u32) -> Result<Checkpoint, CliError> {
    let path = checkpoint_path(dir, replication);
    let bytes = std::fs::read(&path)
        .map_err(|e| CliError::Runtime(format!("reading {}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}
