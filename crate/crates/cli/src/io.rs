//! File formats.
//!
//! A voxel grid is a JSON header plus a raw mask of one byte per voxel,
//! x-fastest. Foci and covariates are CSV keyed by study id; the study list
//! and its order come from the covariate file when present, otherwise from
//! first appearance in the foci file. Posterior volumes are a JSON header
//! plus raw little-endian f32 over the full grid. A fitted chain lives in a
//! draws directory that also carries copies of its inputs, so downstream
//! commands need nothing else.
//!
//! Writes go through a temp file in the target directory followed by a
//! rename, so a crash never leaves a half-written file behind.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use coxmeta_core::grid::{GridHeader, VoxelGrid};
use coxmeta_core::model::{ModelState, PriorConfig, StateShape, Study, StudySet};
use coxmeta_core::sampler::{Chain, ChainMeta};
use coxmeta_core::summaries::Region;
use coxmeta_core::Error as CoreError;
use log::warn;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::errors::{CliError, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Json { path: path.to_path_buf(), message: e.to_string() })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Json { path: path.to_path_buf(), message: e.to_string() })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn load_grid(grid_path: &Path, mask_path: &Path) -> Result<VoxelGrid> {
    let header: GridHeader = read_json(grid_path)?;
    let mask = fs::read(mask_path).map_err(io_err(mask_path))?;
    Ok(VoxelGrid::build(&header, &mask)?)
}

pub fn write_grid(dir: &Path, grid: &VoxelGrid) -> Result<()> {
    write_json(&dir.join("grid.json"), &grid.header())?;
    let mask: Vec<u8> = grid.mask().iter().map(|&b| b as u8).collect();
    write_atomic(&dir.join("mask.raw"), &mask)
}

/// Foci grouped by study id, in first-appearance order.
pub fn read_foci(path: &Path) -> Result<Vec<(String, Vec<[f64; 3]>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, 1, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, 1, e.to_string()))?.clone();
    let want = ["study_id", "x", "y", "z"];
    if headers.iter().take(4).map(str::trim).ne(want) {
        return Err(csv_err(path, 1, format!("header must be study_id,x,y,z, got {}", headers.as_slice())));
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, Vec<[f64; 3]>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, 0, e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() < 4 {
            return Err(csv_err(path, line, format!("{} fields, expected 4", rec.len())));
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(csv_err(path, line, "empty study_id".into()));
        }
        let mut p = [0.0; 3];
        for (k, x) in p.iter_mut().enumerate() {
            *x = rec[k + 1]
                .trim()
                .parse::<f64>()
                .map_err(|e| csv_err(path, line, format!("coordinate '{}': {e}", &rec[k + 1])))?;
            if !x.is_finite() {
                return Err(csv_err(path, line, format!("coordinate {x} is not finite")));
            }
        }
        if !by_id.contains_key(&id) {
            order.push(id.clone());
        }
        by_id.entry(id).or_default().push(p);
    }
    Ok(order.into_iter().map(|id| {
        let pts = by_id.remove(&id).unwrap();
        (id, pts)
    }).collect())
}

pub fn write_foci(path: &Path, studies: &[Study], world: &[Vec<[f64; 3]>]) -> Result<()> {
    let mut out = String::from("study_id,x,y,z\n");
    for (s, pts) in studies.iter().zip(world) {
        for p in pts {
            out.push_str(&format!("{},{},{},{}\n", s.id, p[0], p[1], p[2]));
        }
    }
    write_atomic(path, out.as_bytes())
}

fn csv_err(path: &Path, line: u64, message: String) -> CliError {
    CliError::Csv { path: path.to_path_buf(), line, message }
}

/// Covariate rows keyed by study id: `(column names, rows)` in file order.
pub fn read_covariates(path: &Path) -> Result<(Vec<String>, Vec<(String, Vec<f64>)>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, 1, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, 1, e.to_string()))?.clone();
    if headers.is_empty() || headers[0].trim() != "study_id" {
        return Err(csv_err(path, 1, "first column must be study_id".into()));
    }
    let names: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    let mut seen: HashMap<String, u64> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, 0, e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != names.len() + 1 {
            return Err(csv_err(path, line, format!("{} fields, expected {}", rec.len(), names.len() + 1)));
        }
        let id = rec[0].trim().to_string();
        if let Some(first) = seen.insert(id.clone(), line) {
            return Err(csv_err(path, line, format!("study {id} already declared on line {first}")));
        }
        let mut z = Vec::with_capacity(names.len());
        for k in 0..names.len() {
            let v = rec[k + 1]
                .trim()
                .parse::<f64>()
                .map_err(|e| csv_err(path, line, format!("covariate '{}': {e}", &rec[k + 1])))?;
            if !v.is_finite() {
                return Err(csv_err(path, line, format!("covariate {v} is not finite")));
            }
            z.push(v);
        }
        rows.push((id, z));
    }
    Ok((names, rows))
}

pub fn write_covariates(path: &Path, names: &[String], studies: &[Study]) -> Result<()> {
    let mut out = String::from("study_id");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for s in studies {
        out.push_str(&s.id);
        for v in &s.z[1..] {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Builds the study set from foci and (optionally) covariates.
///
/// With covariates, the covariate file defines the studies and their order,
/// and every focus must belong to one of them; without, studies come from
/// the foci file and carry only the intercept. `drop_outside` trades errors
/// for warnings on foci outside the grid or mask.
pub fn assemble_studies(
    grid: &VoxelGrid,
    foci: Vec<(String, Vec<[f64; 3]>)>,
    covariates: Option<(Vec<String>, Vec<(String, Vec<f64>)>)>,
    k_star: usize,
    drop_outside: bool,
) -> Result<(StudySet, Vec<Vec<[f64; 3]>>, Vec<String>)> {
    let mut foci_by_id: HashMap<String, Vec<[f64; 3]>> = foci.iter().cloned().collect();
    let (names, id_z): (Vec<String>, Vec<(String, Vec<f64>)>) = match covariates {
        Some((names, rows)) => (names, rows),
        None => (Vec::new(), foci.iter().map(|(id, _)| (id.clone(), Vec::new())).collect()),
    };

    let mut studies = Vec::with_capacity(id_z.len());
    let mut world = Vec::with_capacity(id_z.len());
    let mut dropped = 0usize;
    for (id, z_tail) in id_z {
        let pts = foci_by_id.remove(&id).unwrap_or_default();
        let mut voxels = Vec::with_capacity(pts.len());
        let mut kept = Vec::with_capacity(pts.len());
        for (fi, &p) in pts.iter().enumerate() {
            let v = match grid.world_to_voxel(p) {
                Ok(v) if grid.is_masked(v) => v,
                Ok(v) => {
                    if drop_outside {
                        dropped += 1;
                        continue;
                    }
                    return Err(CoreError::FocusVoxelOutsideMask { study_id: id, focus: fi, voxel: v }.into());
                }
                Err(_) => {
                    if drop_outside {
                        dropped += 1;
                        continue;
                    }
                    return Err(CoreError::FocusOutsideMask { study_id: id, focus: fi, x: p[0], y: p[1], z: p[2] }.into());
                }
            };
            voxels.push(v);
            kept.push(p);
        }
        let mut z = Vec::with_capacity(z_tail.len() + 1);
        z.push(1.0);
        z.extend_from_slice(&z_tail);
        studies.push(Study { id, z, foci: voxels });
        world.push(kept);
    }
    if dropped > 0 {
        warn!("dropped {dropped} foci outside the grid or mask");
    }
    if let Some((id, pts)) = foci_by_id.into_iter().find(|(_, pts)| !pts.is_empty()) {
        return Err(CliError::Usage(format!(
            "foci file has {} points for study {id}, which the covariate file does not declare",
            pts.len()
        )));
    }
    let data = StudySet::new(studies, k_star, grid)?;
    Ok((data, world, names))
}

/// JSON header next to each raw volume.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub grid: GridHeader,
    pub what: String,
    pub dtype: String,
    pub order: String,
}

/// Writes a masked field as a full-grid f32 volume (zeros off the mask).
pub fn write_volume(dir: &Path, name: &str, grid: &VoxelGrid, masked: &[f64], what: &str) -> Result<()> {
    let header = VolumeHeader {
        grid: grid.header(),
        what: what.to_string(),
        dtype: "f32le".into(),
        order: "x-fastest".into(),
    };
    write_json(&dir.join(format!("{name}.json")), &header)?;
    let mut full = vec![0.0f32; grid.n_voxels()];
    for (j, &v) in grid.masked_voxels().iter().enumerate() {
        full[v] = masked[j] as f32;
    }
    let mut bytes = Vec::with_capacity(4 * full.len());
    for x in full {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    write_atomic(&dir.join(format!("{name}.raw")), &bytes)
}

/// Scalar coordinates of one stored draw.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrawScalars {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho_scaled: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub meta: ChainMeta,
    pub priors: PriorConfig,
    pub k_star: usize,
    pub covariate_names: Vec<String>,
    pub draws: Vec<DrawScalars>,
}

fn trace_csv(chain: &Chain, shape: StateShape) -> String {
    let mut out = String::from("iter");
    let cols = |out: &mut String, stem: &str, n: usize| {
        for i in 0..n {
            out.push_str(&format!(",{stem}_{i}"));
        }
    };
    cols(&mut out, "mu", shape.n_spatial);
    cols(&mut out, "sigma", shape.n_spatial);
    cols(&mut out, "rho_scaled", shape.n_spatial);
    cols(&mut out, "beta", shape.n_global);
    out.push_str(",log_posterior,accepted,eps\n");
    for r in &chain.trace {
        out.push_str(&r.iter.to_string());
        for xs in [&r.mu, &r.sigma, &r.rho_scaled, &r.beta] {
            for x in xs.iter() {
                out.push_str(&format!(",{x}"));
            }
        }
        out.push_str(&format!(",{},{},{}\n", r.log_posterior, r.accepted, r.eps));
    }
    out
}

/// Writes a fitted chain plus copies of its inputs into `dir`.
pub fn write_draws(
    dir: &Path,
    grid: &VoxelGrid,
    data: &StudySet,
    world: &[Vec<[f64; 3]>],
    covariate_names: &[String],
    priors: PriorConfig,
    chain: &Chain,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let shape = chain.meta.shape;
    let manifest = Manifest {
        meta: chain.meta.clone(),
        priors,
        k_star: data.k_star(),
        covariate_names: covariate_names.to_vec(),
        draws: chain
            .draws
            .iter()
            .map(|d| DrawScalars {
                mu: d.mu.clone(),
                sigma: d.sigma.clone(),
                rho_scaled: d.rho_scaled.clone(),
                beta: d.beta.clone(),
            })
            .collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_atomic(&dir.join("trace.csv"), trace_csv(chain, shape).as_bytes())?;

    let mut bytes = Vec::with_capacity(chain.draws.len() * shape.n_spatial * shape.torus_len * 4);
    for d in &chain.draws {
        for g in &d.gamma {
            for &x in g {
                bytes.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }
    write_atomic(&dir.join("fields.raw"), &bytes)?;

    write_grid(dir, grid)?;
    write_foci(&dir.join("foci.csv"), data.studies(), world)?;
    write_covariates(&dir.join("covariates.csv"), covariate_names, data.studies())
}

/// Everything a downstream command needs from a draws directory.
pub struct LoadedDraws {
    pub grid: VoxelGrid,
    pub data: StudySet,
    pub world: Vec<Vec<[f64; 3]>>,
    pub manifest: Manifest,
    pub states: Vec<ModelState>,
}

pub fn load_draws(dir: &Path) -> Result<LoadedDraws> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    let grid = load_grid(&dir.join("grid.json"), &dir.join("mask.raw"))?;
    let foci = read_foci(&dir.join("foci.csv"))?;
    let covs = read_covariates(&dir.join("covariates.csv"))?;
    let (data, world, _) = assemble_studies(&grid, foci, Some(covs), manifest.k_star, false)?;

    let shape = manifest.meta.shape;
    let path = dir.join("fields.raw");
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let per_draw = shape.n_spatial * shape.torus_len * 4;
    if bytes.len() != per_draw * manifest.draws.len() {
        return Err(CliError::Json {
            path,
            message: format!(
                "fields.raw has {} bytes; manifest promises {} draws of {} bytes",
                bytes.len(),
                manifest.draws.len(),
                per_draw
            ),
        });
    }
    let mut states = Vec::with_capacity(manifest.draws.len());
    for (di, scal) in manifest.draws.iter().enumerate() {
        let mut st = ModelState::zeros(shape);
        st.mu.copy_from_slice(&scal.mu);
        st.sigma.copy_from_slice(&scal.sigma);
        st.rho_scaled.copy_from_slice(&scal.rho_scaled);
        st.beta.copy_from_slice(&scal.beta);
        let mut off = di * per_draw;
        for g in st.gamma.iter_mut() {
            for x in g.iter_mut() {
                *x = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
                off += 4;
            }
        }
        states.push(st);
    }
    Ok(LoadedDraws { grid, data, world, manifest, states })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionsFile {
    pub regions: Vec<Region>,
}

pub fn read_regions(path: &Path) -> Result<Vec<Region>> {
    let f: RegionsFile = read_json(path)?;
    if f.regions.is_empty() {
        return Err(CliError::Usage(format!("{} declares no regions", path.display())));
    }
    Ok(f.regions)
}

/// Parses a covariate profile: comma-separated values for every covariate
/// after the intercept. Returns the full row, intercept included.
pub fn parse_profile(arg: &str, n_covariates: usize) -> Result<Vec<f64>> {
    let mut z = vec![1.0];
    let trimmed = arg.trim();
    if !trimmed.is_empty() {
        for tok in trimmed.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|e| CliError::Usage(format!("profile value '{tok}': {e}")))?;
            z.push(v);
        }
    }
    if z.len() != n_covariates + 1 {
        return Err(CliError::Usage(format!(
            "profile has {} values but the data carries {} covariates",
            z.len() - 1,
            n_covariates
        )));
    }
    Ok(z)
}
