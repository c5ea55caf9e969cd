//! Self-describing checkpoint container.
//!
//! Layout: magic `PNCK`, format version (u32 LE), JSON metadata length
//! (u64 LE), the metadata itself, then raw f64 LE blobs — every parameter
//! in registration order, then per optimizer all first moments followed
//! by all second moments, in owned order. The metadata carries the full
//! config echo, step/epoch counters, the parameter and optimizer tables,
//! RNG stream positions, and the loss history, so a load reproduces the
//! saved run bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::nn::Adam;
use crate::rng::{streams, RngState};

use super::{io_err, CollapseFlag, StepRecord, TrainConfig, TrainError, TrainState};

const MAGIC: &[u8; 4] = b"PNCK";
const VERSION: u32 = 1;
/// Upper bound on the metadata block; anything larger is a corrupt file,
/// not a plausible run.
const MAX_META: u64 = 1 << 31;

#[derive(Serialize, Deserialize)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptSpec {
    label: String,
    t: u64,
    owned: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    cfg: TrainConfig,
    epochs_done: usize,
    steps_done: usize,
    params: Vec<ParamSpec>,
    optimizers: Vec<OptSpec>,
    rng_order: RngState,
    rng_latent: RngState,
    history: Vec<StepRecord>,
    collapse_flags: Vec<CollapseFlag>,
}

fn bad(path: &Path, what: impl Into<String>) -> TrainError {
    TrainError::BadCheckpoint {
        path: path.to_path_buf(),
        what: what.into(),
    }
}

/// Optimizer slots in serialization order, labeled.
fn optimizer_slots(state: &TrainState) -> Vec<(&'static str, &Adam)> {
    let mut slots: Vec<(&'static str, &Adam)> = vec![("g", &state.opt_g)];
    if let Some(enh) = &state.opt_g_enh {
        slots.push(("g2", enh));
    }
    slots.push(("d", &state.opt_d));
    slots
}

fn write_array(w: &mut impl Write, arr: &ArrayD<f64>) -> std::io::Result<()> {
    for x in arr.iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Saves the complete run state to `path`, creating parent directories.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<(), TrainError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err("creating", parent))?;
        }
    }
    let slots = optimizer_slots(state);
    let meta = Meta {
        cfg: state.cfg.clone(),
        epochs_done: state.epochs_done,
        steps_done: state.steps_done,
        params: state
            .params
            .iter()
            .map(|(_, name, value)| ParamSpec {
                name: name.to_owned(),
                shape: value.shape().to_vec(),
            })
            .collect(),
        optimizers: slots
            .iter()
            .map(|(label, opt)| OptSpec {
                label: (*label).to_owned(),
                t: opt.state().2,
                owned: opt
                    .owned()
                    .iter()
                    .map(|&id| state.params.name(id).to_owned())
                    .collect(),
            })
            .collect(),
        rng_order: RngState::capture(state.cfg.seed, streams::TRAIN_ORDER, &state.rng_order),
        rng_latent: RngState::capture(state.cfg.seed, streams::TRAIN_LATENT, &state.rng_latent),
        history: state.history.clone(),
        collapse_flags: state.collapse_flags.clone(),
    };
    let meta_bytes = serde_json::to_vec(&meta).expect("metadata serialization is total");

    let inner = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(meta_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&meta_bytes)?;
        for (_, _, value) in state.params.iter() {
            write_array(w, value)?;
        }
        for (_, opt) in &slots {
            let (m, v, _) = opt.state();
            for a in m {
                write_array(w, a)?;
            }
            for a in v {
                write_array(w, a)?;
            }
        }
        w.flush()
    };
    let file = File::create(path).map_err(io_err("creating checkpoint", path))?;
    let mut w = BufWriter::new(file);
    inner(&mut w).map_err(io_err("writing checkpoint", path))
}

/// `read_exact` that reports truncation as a checkpoint defect rather
/// than a bare IO error.
fn read_exact_ck(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<(), TrainError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            bad(path, "truncated file")
        } else {
            TrainError::Io {
                context: "reading checkpoint",
                path: path.to_path_buf(),
                source: e,
            }
        }
    })
}

fn read_array(
    r: &mut impl Read,
    shape: &[usize],
    path: &Path,
) -> Result<ArrayD<f64>, TrainError> {
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * 8];
    read_exact_ck(r, &mut bytes, path)?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk is 8 bytes")))
        .collect();
    Ok(ArrayD::from_shape_vec(shape.to_vec(), values).expect("length matches shape"))
}

/// Rebuilds a [`TrainState`] from a checkpoint file. The stored config
/// reconstructs the architecture; the parameter and optimizer tables are
/// verified against it before any blob is accepted.
pub fn load_checkpoint(path: &Path) -> Result<TrainState, TrainError> {
    let file = File::open(path).map_err(io_err("opening checkpoint", path))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact_ck(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(bad(path, "not a checkpoint (bad magic)"));
    }
    let mut word = [0u8; 4];
    read_exact_ck(&mut r, &mut word, path)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(bad(path, format!("unsupported format version {version}")));
    }
    let mut len_bytes = [0u8; 8];
    read_exact_ck(&mut r, &mut len_bytes, path)?;
    let meta_len = u64::from_le_bytes(len_bytes);
    if meta_len > MAX_META {
        return Err(bad(path, format!("implausible metadata size {meta_len}")));
    }
    let mut meta_bytes = vec![0u8; meta_len as usize];
    read_exact_ck(&mut r, &mut meta_bytes, path)?;
    let meta: Meta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| bad(path, format!("malformed metadata: {e}")))?;

    if meta.history.len() != meta.steps_done {
        return Err(bad(
            path,
            format!(
                "history holds {} records but {} steps were executed",
                meta.history.len(),
                meta.steps_done
            ),
        ));
    }
    for rng in [&meta.rng_order, &meta.rng_latent] {
        if rng.word_pos.parse::<u128>().is_err() {
            return Err(bad(path, format!("bad rng position `{}`", rng.word_pos)));
        }
    }

    let mut state = TrainState::new(meta.cfg.clone())?;

    // The rebuilt parameter table must match the stored one exactly;
    // a mismatch means the config describes a different architecture.
    if meta.params.len() != state.params.len() {
        return Err(bad(
            path,
            format!(
                "parameter table holds {} entries, rebuilt model has {}",
                meta.params.len(),
                state.params.len()
            ),
        ));
    }
    let table: Vec<(crate::nn::ParamId, String, Vec<usize>)> = state
        .params
        .iter()
        .map(|(id, name, value)| (id, name.to_owned(), value.shape().to_vec()))
        .collect();
    for (spec, (_, name, shape)) in meta.params.iter().zip(&table) {
        if &spec.name != name || &spec.shape != shape {
            return Err(bad(
                path,
                format!(
                    "parameter mismatch: stored {} {:?}, rebuilt {} {:?}",
                    spec.name, spec.shape, name, shape
                ),
            ));
        }
    }
    for (id, _, shape) in &table {
        *state.params.value_mut(*id) = read_array(&mut r, shape, path)?;
    }

    let expected: Vec<&'static str> = {
        let mut v = vec!["g"];
        if state.opt_g_enh.is_some() {
            v.push("g2");
        }
        v.push("d");
        v
    };
    if meta.optimizers.len() != expected.len() {
        return Err(bad(
            path,
            format!(
                "{} optimizer slots stored, {} expected",
                meta.optimizers.len(),
                expected.len()
            ),
        ));
    }
    for (spec, label) in meta.optimizers.iter().zip(&expected) {
        if &spec.label != label {
            return Err(bad(
                path,
                format!("optimizer slot `{}` where `{label}` expected", spec.label),
            ));
        }
        let owned: Vec<crate::nn::ParamId> = match *label {
            "g" => state.opt_g.owned().to_vec(),
            "g2" => state
                .opt_g_enh
                .as_ref()
                .expect("g2 slot implies enhancer optimizer")
                .owned()
                .to_vec(),
            _ => state.opt_d.owned().to_vec(),
        };
        let names: Vec<String> = owned
            .iter()
            .map(|&id| state.params.name(id).to_owned())
            .collect();
        if names != spec.owned {
            return Err(bad(
                path,
                format!("optimizer `{label}` owns a different parameter set"),
            ));
        }
        let shapes: Vec<Vec<usize>> = owned
            .iter()
            .map(|&id| state.params.value(id).shape().to_vec())
            .collect();
        let mut m = Vec::with_capacity(shapes.len());
        for shape in &shapes {
            m.push(read_array(&mut r, shape, path)?);
        }
        let mut v = Vec::with_capacity(shapes.len());
        for shape in &shapes {
            v.push(read_array(&mut r, shape, path)?);
        }
        match *label {
            "g" => state.opt_g.restore(m, v, spec.t),
            "g2" => state
                .opt_g_enh
                .as_mut()
                .expect("checked above")
                .restore(m, v, spec.t),
            _ => state.opt_d.restore(m, v, spec.t),
        }
    }

    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => return Err(bad(path, "trailing data after blobs")),
        Err(e) => {
            return Err(TrainError::Io {
                context: "reading checkpoint",
                path: path.to_path_buf(),
                source: e,
            })
        }
    }

    state.rng_order = meta.rng_order.restore();
    state.rng_latent = meta.rng_latent.restore();
    state.history = meta.history;
    state.collapse_flags = meta.collapse_flags;
    state.epochs_done = meta.epochs_done;
    state.steps_done = meta.steps_done;
    Ok(state)
}
