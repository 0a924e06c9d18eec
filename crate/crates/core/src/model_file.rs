//! Binary model format.
//!
//! All integers and floats are little-endian; strings are a `u32` byte
//! length followed by UTF-8.
//!
//! ```text
//! "BCRF1"                       magic
//! u32                           format version (1)
//! str                           template set name
//! str f64 u8 u32 f64            update kind, hyperparameter, has-table, table resolution, table range
//! u32 [str]                     label alphabet
//! u32 [str u32 [u32 u32]]       attributes with their (label, feature id) entries
//! u64 [f64]                     unscaled weight per feature id
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::chain_crf::ChainModel;
use crate::corpus::LabelAlphabet;
use crate::error::{Error, Result};
use crate::features::{FeatureIndex, TemplateSet};
use crate::transforms::{TableSpec, TransformSpec};

pub const MAGIC: &[u8; 5] = b"BCRF1";
pub const VERSION: u32 = 1;

// Sanity limit for length prefixes read from disk.
const MAX_LEN: usize = 1 << 31;

#[derive(Debug, Clone)]
pub struct ModelFile {
    pub model: ChainModel,
    /// The update the model was trained with.
    pub update: TransformSpec,
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> io::Result<()> {
        self.0.write_all(&[v])
    }
    fn u32(&mut self, v: u32) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn str(&mut self, s: &str) -> io::Result<()> {
        self.u32(s.len() as u32)?;
        self.0.write_all(s.as_bytes())
    }
}

struct Reader<R: Read>(R);

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::ModelFormat("truncated file".into())
    } else {
        Error::Io(e)
    }
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0; N];
        self.0.read_exact(&mut buf).map_err(truncated)?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u32()? as usize;
        if n > MAX_LEN {
            return Err(Error::ModelFormat(format!("implausible length {n}")));
        }
        Ok(n)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        let mut buf = Vec::new();
        (&mut self.0).take(n as u64).read_to_end(&mut buf)?;
        if buf.len() != n {
            return Err(Error::ModelFormat("truncated file".into()));
        }
        String::from_utf8(buf).map_err(|_| Error::ModelFormat("invalid UTF-8".into()))
    }
}

/// Writes `model` with its scale folded into the weights.
pub fn write_model<W: Write>(out: W, model: &ChainModel, update: &TransformSpec) -> Result<()> {
    let mut w = Writer(out);
    let index = model.index();
    w.0.write_all(MAGIC)?;
    w.u32(VERSION)?;
    w.str(index.templates().name())?;

    w.str(update.kind.name())?;
    w.f64(update.hyper)?;
    let table = update.table.unwrap_or_default();
    w.u8(update.table.is_some() as u8)?;
    w.u32(table.resolution)?;
    w.f64(table.range)?;

    let labels = index.labels().names();
    w.u32(labels.len() as u32)?;
    for l in labels {
        w.str(l)?;
    }

    w.u32(index.num_attributes() as u32)?;
    for (name, entries) in index.attribute_entries() {
        w.str(name)?;
        w.u32(entries.len() as u32)?;
        for &(label, fid) in entries {
            w.u32(label)?;
            w.u32(fid)?;
        }
    }

    w.u64(model.dim() as u64)?;
    for &v in model.weights() {
        w.f64(v * model.scale())?;
    }
    w.0.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(input: R) -> Result<ModelFile> {
    let mut r = Reader(input);
    if &r.bytes::<5>()? != MAGIC {
        return Err(Error::ModelFormat("bad magic header".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let templates: TemplateSet = r
        .str()?
        .parse()
        .map_err(|_| Error::ModelFormat("unknown template set".into()))?;

    let kind = r
        .str()?
        .parse()
        .map_err(|_| Error::ModelFormat("unknown update kind".into()))?;
    let hyper = r.f64()?;
    let has_table = r.u8()? != 0;
    let table = TableSpec {
        resolution: r.u32()?,
        range: r.f64()?,
    };
    let update = TransformSpec {
        kind,
        hyper,
        table: has_table.then_some(table),
    };

    let num_labels = r.len()?;
    let names = (0..num_labels).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let labels = LabelAlphabet::new(names.iter().cloned());
    if labels.names() != names.as_slice() {
        return Err(Error::ModelFormat("label alphabet not sorted or not unique".into()));
    }

    let num_attrs = r.len()?;
    let mut attributes = Vec::with_capacity(num_attrs.min(1 << 20));
    for _ in 0..num_attrs {
        let name = r.str()?;
        let n = r.len()?;
        let entries = (0..n).map(|_| Ok((r.u32()?, r.u32()?))).collect::<Result<Vec<_>>>()?;
        attributes.push((name, entries));
    }
    let index = FeatureIndex::from_parts(templates, labels, attributes)?;

    let d = r.u64()? as usize;
    if d != index.dim() {
        return Err(Error::ModelFormat(format!(
            "expected {} weights, found {d}",
            index.dim()
        )));
    }
    let weights = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let mut rest = [0u8; 1];
    if r.0.read(&mut rest)? != 0 {
        return Err(Error::ModelFormat("trailing bytes".into()));
    }
    let model = ChainModel::from_weights(Arc::new(index), weights)?;
    Ok(ModelFile { model, update })
}

pub fn save(path: &Path, model: &ChainModel, update: &TransformSpec) -> Result<()> {
    write_model(BufWriter::new(File::create(path)?), model, update)
}

pub fn load(path: &Path) -> Result<ModelFile> {
    read_model(BufReader::new(File::open(path)?))
}

/// `feature<TAB>weight`, one line per feature id.
pub fn write_text<W: Write>(mut out: W, model: &ChainModel) -> Result<()> {
    for (name, w) in model.index().feature_names().iter().zip(model.effective_weights()) {
        writeln!(out, "{name}\t{w}")?;
    }
    out.flush()?;
    Ok(())
}
