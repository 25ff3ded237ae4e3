//! Binary checkpoints of learnable parameters and batch-norm running statistics.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "WRIN"  u8 version
//! repeated: u32 name_len, name (UTF-8), u8 rank, rank × u32 dims, f32 values
//! u64 entry_count
//! ```
//!
//! Running statistics are stored as `<bn>/running_mean` and `<bn>/running_var`.
//! Optimizer state uses the same layout in a separate file, one
//! `<param>/velocity` entry per parameter.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::NetworkGraph;
use crate::optim::OptimizerState;
use crate::tensor::Element;

pub const MAGIC: &[u8; 4] = b"WRIN";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

/// Every entry a graph contributes, in registry order.
pub fn entries_of<T: Element>(graph: &NetworkGraph<T>) -> Vec<Entry> {
    let to_f32 = |v: &[T]| v.iter().map(|x| x.as_f64() as f32).collect::<Vec<_>>();
    let mut out: Vec<Entry> = graph
        .params()
        .iter()
        .map(|p| Entry {
            name: p.name.clone(),
            dims: p.dims.clone(),
            values: to_f32(&p.data),
        })
        .collect();
    for s in graph.running_stats() {
        out.push(Entry {
            name: format!("{}/running_mean", s.name),
            dims: vec![s.mean.len()],
            values: to_f32(&s.mean),
        });
        out.push(Entry {
            name: format!("{}/running_var", s.name),
            dims: vec![s.var.len()],
            values: to_f32(&s.var),
        });
    }
    out
}

pub fn write_entries<W: Write>(entries: &[Entry], mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    for e in entries {
        let name = e.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let rank =
            u8::try_from(e.dims.len()).map_err(|_| Error::Checkpoint(format!("rank too large for `{}`", e.name)))?;
        w.write_all(&[rank])?;
        for &d in &e.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        if e.dims.iter().product::<usize>() != e.values.len() {
            return Err(Error::Checkpoint(format!(
                "dims of `{}` disagree with its values",
                e.name
            )));
        }
        for v in &e.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.write_all(&(entries.len() as u64).to_le_bytes())?;
    w.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format {
                offset: self.offset,
                message: format!("truncated while reading {what}"),
            },
            _ => Error::Io(e),
        })?;
        self.offset += n as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint stream. The trailing count must match the entries read.
pub fn read_entries<R: Read>(r: R) -> Result<Vec<Entry>> {
    let mut all = Vec::new();
    let mut c = Cursor { inner: r, offset: 0 };
    c.inner.read_to_end(&mut all)?;
    if all.len() < 5 + 8 || &all[..4] != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "not a checkpoint (bad magic)".into(),
        });
    }
    if all[4] != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {}", all[4]),
        });
    }
    let body_end = all.len() - 8;
    let count = u64::from_le_bytes(all[body_end..].try_into().unwrap());
    let mut c = Cursor {
        inner: &all[5..body_end],
        offset: 5,
    };
    let mut entries = Vec::new();
    while c.offset < body_end as u64 {
        let name_len = c.u32("name length")? as usize;
        let name = String::from_utf8(c.bytes(name_len, "name")?).map_err(|_| Error::Format {
            offset: c.offset,
            message: "entry name is not UTF-8".into(),
        })?;
        let rank = c.bytes(1, "rank")?[0] as usize;
        let dims = (0..rank)
            .map(|_| c.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let raw = c.bytes(n * 4, "values")?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        entries.push(Entry { name, dims, values });
    }
    if count != entries.len() as u64 {
        return Err(Error::Format {
            offset: body_end as u64,
            message: format!("entry count {count} but {} entries present", entries.len()),
        });
    }
    Ok(entries)
}

/// Copies entries into a graph of the same architecture. Every parameter and
/// statistic must be present with matching dimensions; unknown names are errors.
pub fn apply_entries<T: Element>(graph: &mut NetworkGraph<T>, entries: &[Entry]) -> Result<()> {
    let expected = entries_of(graph);
    if expected.len() != entries.len() {
        return Err(Error::Checkpoint(format!(
            "network `{}` has {} entries, checkpoint has {}",
            graph.name(),
            expected.len(),
            entries.len()
        )));
    }
    let lookup: std::collections::HashMap<&str, &Entry> = entries.iter().map(|e| (e.name.as_str(), e)).collect();
    let fetch = |name: &str, dims: &[usize]| -> Result<Vec<T>> {
        let e = lookup
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry `{name}`")))?;
        if e.dims != dims {
            return Err(Error::Checkpoint(format!(
                "entry `{name}` has dims {:?}, expected {:?}",
                e.dims, dims
            )));
        }
        Ok(e.values.iter().map(|&v| T::of(v as f64)).collect())
    };
    let mut new_params = Vec::with_capacity(graph.params().len());
    for p in graph.params() {
        new_params.push(fetch(&p.name, &p.dims)?);
    }
    let mut new_stats = Vec::with_capacity(graph.running_stats().len());
    for s in graph.running_stats() {
        let mean = fetch(&format!("{}/running_mean", s.name), &[s.mean.len()])?;
        let var = fetch(&format!("{}/running_var", s.name), &[s.var.len()])?;
        new_stats.push((mean, var));
    }
    for (p, data) in graph.params_mut().iter_mut().zip(new_params) {
        p.data = data;
    }
    for (s, (mean, var)) in graph.running_stats_mut().iter_mut().zip(new_stats) {
        s.mean = mean;
        s.var = var;
    }
    Ok(())
}

pub fn save_checkpoint<T: Element>(graph: &NetworkGraph<T>, path: &Path) -> Result<()> {
    write_entries(&entries_of(graph), BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint<T: Element>(graph: &mut NetworkGraph<T>, path: &Path) -> Result<()> {
    let entries = read_entries(BufReader::new(File::open(path)?))?;
    apply_entries(graph, &entries)
}

pub fn save_optimizer_state<T: Element>(graph: &NetworkGraph<T>, state: &OptimizerState<T>, path: &Path) -> Result<()> {
    if state.velocity.len() != graph.params().len() {
        return Err(Error::Checkpoint(format!(
            "optimizer state has {} tensors for {} parameters",
            state.velocity.len(),
            graph.params().len()
        )));
    }
    let entries: Vec<Entry> = graph
        .params()
        .iter()
        .zip(&state.velocity)
        .map(|(p, v)| Entry {
            name: format!("{}/velocity", p.name),
            dims: p.dims.clone(),
            values: v.iter().map(|x| x.as_f64() as f32).collect(),
        })
        .collect();
    write_entries(&entries, BufWriter::new(File::create(path)?))
}

/// Reads velocities for `graph`; `step_count` is left at zero.
pub fn load_optimizer_state<T: Element>(graph: &NetworkGraph<T>, path: &Path) -> Result<OptimizerState<T>> {
    let entries = read_entries(BufReader::new(File::open(path)?))?;
    if entries.len() != graph.params().len() {
        return Err(Error::Checkpoint(format!(
            "optimizer state has {} entries for {} parameters",
            entries.len(),
            graph.params().len()
        )));
    }
    let lookup: std::collections::HashMap<&str, &Entry> = entries.iter().map(|e| (e.name.as_str(), e)).collect();
    let mut state = OptimizerState::new(graph);
    for (p, v) in graph.params().iter().zip(state.velocity.iter_mut()) {
        let name = format!("{}/velocity", p.name);
        let e = lookup
            .get(name.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("missing entry `{name}`")))?;
        if e.dims != p.dims {
            return Err(Error::Checkpoint(format!(
                "entry `{name}` has dims {:?}, expected {:?}",
                e.dims, p.dims
            )));
        }
        *v = e.values.iter().map(|&x| T::of(x as f64)).collect();
    }
    Ok(state)
}
