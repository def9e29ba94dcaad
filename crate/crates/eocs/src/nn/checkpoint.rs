//! Checkpoint format: magic "PGNN", format version, architecture header,
//! the frozen feature-scaling ranges, then the weight blocks as
//! little-endian f64 in a fixed order (four stacks layer by layer, then MLP
//! weight/bias pairs).

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Aggregator, Architecture, Linear, NnError, PgnnModel, SageLayer};
use crate::features::FeatureScaling;

const MAGIC: &[u8; 4] = b"PGNN";
const VERSION: u32 = 1;

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<(), NnError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn write_f64s<W: Write>(w: &mut W, values: impl Iterator<Item = f64>) -> Result<(), NnError> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>, NnError> {
    let mut out = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

/// Serialize a model; the round trip restores it bit-exactly.
pub fn save_checkpoint(model: &PgnnModel, path: impl AsRef<Path>) -> Result<(), NnError> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    let arch = &model.arch;
    write_u32(&mut w, arch.n as u32)?;
    write_u32(&mut w, arch.m as u32)?;
    write_u32(&mut w, arch.d as u32)?;
    write_u32(&mut w, arch.layers as u32)?;
    write_u32(&mut w, arch.aggregator.code())?;
    write_u32(&mut w, arch.mlp_widths.len() as u32)?;
    for &width in &arch.mlp_widths {
        write_u32(&mut w, width as u32)?;
    }
    let s = &model.scaling;
    write_f64s(
        &mut w,
        [s.p.0, s.p.1, s.t.0, s.t.1, s.d_z.0, s.d_z.1, s.d.0, s.d.1].into_iter(),
    )?;
    for stack in &model.stacks {
        for layer in stack {
            write_f64s(&mut w, layer.w.iter().copied())?;
        }
    }
    for layer in &model.mlp {
        write_f64s(&mut w, layer.w.iter().copied())?;
        write_f64s(&mut w, layer.b.iter().copied())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<PgnnModel, NnError> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::VersionMismatch(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NnError::VersionMismatch(format!(
            "format version {version}, expected {VERSION}"
        )));
    }
    let n = read_u32(&mut r)? as usize;
    let m = read_u32(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;
    let layers = read_u32(&mut r)? as usize;
    let aggregator = Aggregator::from_code(read_u32(&mut r)?)
        .ok_or_else(|| NnError::VersionMismatch("unknown aggregator code".into()))?;
    let widths_len = read_u32(&mut r)? as usize;
    let mut mlp_widths = Vec::with_capacity(widths_len);
    for _ in 0..widths_len {
        mlp_widths.push(read_u32(&mut r)? as usize);
    }
    let arch = Architecture { n, m, d, layers, mlp_widths, aggregator };

    let sc = read_f64s(&mut r, 8)?;
    let scaling = FeatureScaling {
        p: (sc[0], sc[1]),
        t: (sc[2], sc[3]),
        d_z: (sc[4], sc[5]),
        d: (sc[6], sc[7]),
    };

    let dims = arch.stack_dims();
    let mut stacks: [Vec<SageLayer>; 4] = std::array::from_fn(|_| Vec::new());
    for stack in &mut stacks {
        for &(out, input) in &dims {
            let data = read_f64s(&mut r, out * input)?;
            stack.push(SageLayer {
                w: Array2::from_shape_vec((out, input), data)
                    .map_err(|e| NnError::VersionMismatch(e.to_string()))?,
                aggregator,
            });
        }
    }
    let mut mlp = Vec::with_capacity(arch.mlp_widths.len() - 1);
    for pair in arch.mlp_widths.windows(2) {
        let (input, out) = (pair[0], pair[1]);
        let w_data = read_f64s(&mut r, out * input)?;
        let b_data = read_f64s(&mut r, out)?;
        mlp.push(Linear {
            w: Array2::from_shape_vec((out, input), w_data)
                .map_err(|e| NnError::VersionMismatch(e.to_string()))?,
            b: Array1::from_vec(b_data),
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(NnError::VersionMismatch("trailing bytes after weight blocks".into()));
    }
    let model = PgnnModel { arch, stacks, mlp, scaling };
    Ok(model)
}
