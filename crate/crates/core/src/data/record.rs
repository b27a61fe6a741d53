//! Per-trajectory binary records (see [`crate::archive`] for the container).

use std::path::Path;

use serde_json::json;

use super::{ActionRow, StateRow, Trajectory};
use crate::archive::{Archive, Field, FieldData};
use crate::error::{Error, Result};
use crate::sim::{Image, Instruction, Observation, View, ACTION_DIM, STATE_DIM};

const KIND: &str = "trajectory";

pub(crate) fn trajectory_to_archive(traj: &Trajectory) -> Result<Archive> {
    traj.validate()?;
    let t = traj.len();
    let size = traj.observations[0].static_view.size;
    let mut ar = Archive::new(
        KIND,
        json!({
            "id": traj.id,
            "instruction": traj.instruction.slug(),
            "text": traj.instruction.text(),
            "episode_seed": traj.episode_seed,
        }),
    );
    ar.push(Field::f32(
        "actions",
        vec![t, ACTION_DIM],
        traj.actions.iter().flatten().copied().collect(),
    ));
    ar.push(Field::f32(
        "states",
        vec![t, STATE_DIM],
        traj.states.iter().flatten().copied().collect(),
    ));
    for view in View::ALL {
        let mut pixels = Vec::with_capacity(t * size * size * 3);
        for o in &traj.observations {
            let img = o.view(view);
            if img.size != size || img.data.len() != size * size * 3 {
                return Err(Error::shape(format!("{size}x{size}x3 image"), format!("{}", img.size)));
            }
            pixels.extend_from_slice(&img.data);
        }
        ar.push(Field::u8(format!("obs/{}", view.name()), vec![t, size, size, 3], pixels));
    }
    Ok(ar)
}

pub(crate) fn trajectory_to_bytes(traj: &Trajectory) -> Result<Vec<u8>> {
    trajectory_to_archive(traj)?.to_bytes()
}

fn rows<const N: usize>(ar: &Archive, name: &str, path: &Path) -> Result<Vec<[f32; N]>> {
    let f = ar
        .field(name)
        .ok_or_else(|| Error::format(path, format!("missing field `{name}`")))?;
    match (&f.data, f.shape.as_slice()) {
        (FieldData::F32(v), [_, n]) if *n == N => Ok(v
            .chunks_exact(N)
            .map(|c| c.try_into().unwrap())
            .collect()),
        _ => Err(Error::format(path, format!("field `{name}` has wrong type or shape"))),
    }
}

fn images(ar: &Archive, view: View, path: &Path) -> Result<Vec<Image>> {
    let name = format!("obs/{}", view.name());
    let f = ar
        .field(&name)
        .ok_or_else(|| Error::format(path, format!("missing field `{name}`")))?;
    match (&f.data, f.shape.as_slice()) {
        (FieldData::U8(v), [_, h, w, 3]) if h == w => {
            let size = *h;
            Ok(v.chunks_exact(size * size * 3)
                .map(|c| Image {
                    size,
                    data: c.to_vec(),
                })
                .collect())
        }
        _ => Err(Error::format(path, format!("field `{name}` has wrong type or shape"))),
    }
}

pub(crate) fn trajectory_from_archive(ar: &Archive, path: &Path) -> Result<Trajectory> {
    if ar.kind != KIND {
        return Err(Error::format(path, format!("expected a trajectory, found `{}`", ar.kind)));
    }
    let meta_err = || Error::format(path, "malformed trajectory metadata");
    let id = ar.meta["id"].as_u64().ok_or_else(meta_err)? as usize;
    let episode_seed = ar.meta["episode_seed"].as_u64().ok_or_else(meta_err)?;
    let instruction: Instruction = ar.meta["instruction"]
        .as_str()
        .ok_or_else(meta_err)?
        .parse()
        .map_err(|_| meta_err())?;
    let actions: Vec<ActionRow> = rows(ar, "actions", path)?;
    let states: Vec<StateRow> = rows(ar, "states", path)?;
    let statics = images(ar, View::Static, path)?;
    let wrists = images(ar, View::Wrist, path)?;
    if statics.len() != wrists.len() {
        return Err(Error::format(path, "view streams differ in length"));
    }
    let traj = Trajectory {
        id,
        instruction,
        episode_seed,
        observations: statics
            .into_iter()
            .zip(wrists)
            .map(|(static_view, wrist)| Observation { static_view, wrist })
            .collect(),
        actions,
        states,
    };
    traj.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(traj)
}

pub(crate) fn trajectory_from_bytes(bytes: &[u8], path: &Path) -> Result<Trajectory> {
    trajectory_from_archive(&Archive::from_bytes(bytes, path)?, path)
}

pub fn save_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    trajectory_to_archive(traj)?.save(path)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    trajectory_from_archive(&Archive::load(path)?, path)
}
