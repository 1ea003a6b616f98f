//! File formats: JSON with round-trip float precision, JSON-Lines frames,
//! CSV metrics and tracks.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{ParticleSet, Pose, TrackObservations};
use crate::gaussian::{DiscreteState, Gaussian, HybridMixand, HybridMixture};

/// Writes every float with 17 significant digits.
#[derive(Clone, Copy, Debug, Default)]
pub struct RoundTripFormatter;

impl Formatter for RoundTripFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

pub fn to_json_17<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, RoundTripFormatter);
    value.serialize(&mut ser).expect("in-memory serialization");
    String::from_utf8(buf).expect("serde_json emits utf-8")
}

/// Float text with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixandRecord {
    pub w: f64,
    pub alpha: String,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

/// One line of a frames file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub k: usize,
    pub t: f64,
    pub mixands: Vec<MixandRecord>,
}

impl FrameRecord {
    pub fn from_mixture(mix: &HybridMixture, dt: f64) -> Self {
        FrameRecord {
            k: mix.time_index,
            t: mix.time_index as f64 * dt,
            mixands: mix
                .mixands
                .iter()
                .map(|m| MixandRecord {
                    w: m.weight,
                    alpha: m.discrete.to_string(),
                    mu: m.gaussian.mean.as_slice().to_vec(),
                    sigma: m.gaussian.covariance.row_iter().map(|r| r.iter().copied().collect()).collect(),
                })
                .collect(),
        }
    }

    pub fn to_mixture(&self) -> Result<HybridMixture> {
        if self.mixands.is_empty() {
            return Err(Error::EmptyMixture);
        }
        let mixands = self
            .mixands
            .iter()
            .map(|m| {
                let rows: Vec<&[f64]> = m.sigma.iter().map(|r| r.as_slice()).collect();
                Ok(HybridMixand::new(m.w, m.alpha.as_str(), Gaussian::from_slices(&m.mu, &rows)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(HybridMixture {
            mixands,
            time_index: self.k,
        })
    }
}

/// Frames read back from JSON-Lines with their timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFile {
    pub frames: Vec<HybridMixture>,
    pub times: Vec<f64>,
}

impl FrameFile {
    /// Step length implied by the first frame.
    pub fn dt(&self) -> Result<f64> {
        match (self.frames.first(), self.times.first()) {
            (Some(f), Some(t)) if f.time_index > 0 => Ok(t / f.time_index as f64),
            _ => Err(Error::MisalignedTimestamps("frames file has no frame with k > 0".into())),
        }
    }
}

pub fn write_frames<W: Write>(mut w: W, frames: &[HybridMixture], dt: f64) -> Result<()> {
    for f in frames {
        writeln!(w, "{}", to_json_17(&FrameRecord::from_mixture(f, dt)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_frames(path: &Path, frames: &[HybridMixture], dt: f64) -> Result<()> {
    write_frames(BufWriter::new(File::create(path)?), frames, dt)
}

/// Parses frames, requiring consecutive `k` and increasing `t`.
pub fn read_frames<R: BufRead>(r: R) -> Result<FrameFile> {
    let mut out = FrameFile {
        frames: Vec::new(),
        times: Vec::new(),
    };
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(&line)?;
        if let Some(prev) = out.frames.last() {
            if rec.k != prev.time_index + 1 || !(rec.t > *out.times.last().unwrap_or(&f64::NEG_INFINITY)) {
                return Err(Error::MisalignedTimestamps(format!("frame k={} does not follow k={}", rec.k, prev.time_index)));
            }
        }
        out.frames.push(rec.to_mixture()?);
        out.times.push(rec.t);
    }
    Ok(out)
}

pub fn load_frames(path: &Path) -> Result<FrameFile> {
    read_frames(BufReader::new(File::open(path)?))
}

/// One line of a particle-truth file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleRecord {
    pub k: usize,
    pub t: f64,
    pub seed: u64,
    pub alpha: Vec<String>,
    pub states: Vec<Vec<f64>>,
}

pub fn write_particles<W: Write>(mut w: W, sets: &[ParticleSet], first_k: usize, dt: f64) -> Result<()> {
    for (i, s) in sets.iter().enumerate() {
        let k = first_k + i;
        let rec = ParticleRecord {
            k,
            t: k as f64 * dt,
            seed: s.seed,
            alpha: s.hypotheses.iter().map(|a| a.to_string()).collect(),
            states: s.states.iter().map(|x| x.as_slice().to_vec()).collect(),
        };
        writeln!(w, "{}", to_json_17(&rec))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_particles(path: &Path, sets: &[ParticleSet], first_k: usize, dt: f64) -> Result<()> {
    write_particles(BufWriter::new(File::create(path)?), sets, first_k, dt)
}

/// Particle sets with their `(k, t)` stamps.
pub fn load_particles(path: &Path) -> Result<Vec<(usize, f64, ParticleSet)>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ParticleRecord = serde_json::from_str(&line)?;
        if rec.alpha.len() != rec.states.len() {
            return Err(Error::DimensionMismatch {
                expected: rec.states.len(),
                found: rec.alpha.len(),
            });
        }
        let set = ParticleSet {
            states: rec.states.iter().map(|s| DVector::from_column_slice(s)).collect(),
            hypotheses: rec.alpha.into_iter().map(DiscreteState::from).collect(),
            seed: rec.seed,
        };
        out.push((rec.k, rec.t, set));
    }
    Ok(out)
}

/// One row of a `step,t,value` metric file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub t: f64,
    pub value: f64,
}

pub fn write_metric_csv<W: Write>(mut w: W, rows: &[MetricRow]) -> Result<()> {
    writeln!(w, "step,t,value")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.step, fmt_f64(r.t), fmt_f64(r.value))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_metric_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    write_metric_csv(BufWriter::new(File::create(path)?), rows)
}

/// Header and numeric rows of a small CSV file.
fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::InvalidConfig("empty CSV".into()))?
        .split(',')
        .map(|h| h.trim().to_string())
        .collect();
    let rows = lines
        .enumerate()
        .map(|(i, l)| {
            let row = l
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::InvalidConfig(format!("CSV row {}: {e}", i + 2)))?;
            if row.len() != header.len() {
                return Err(Error::InvalidConfig(format!("CSV row {} has {} columns, expected {}", i + 2, row.len(), header.len())));
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, rows))
}

pub fn read_metric_csv(text: &str) -> Result<Vec<MetricRow>> {
    let (header, rows) = parse_csv(text)?;
    if header != ["step", "t", "value"] {
        return Err(Error::InvalidConfig(format!("metric header must be step,t,value, got {}", header.join(","))));
    }
    Ok(rows
        .iter()
        .map(|r| MetricRow {
            step: r[0] as usize,
            t: r[1],
            value: r[2],
        })
        .collect())
}

/// Parses `t,x,y[,v,theta]`.
pub fn parse_observations(text: &str, source: &str) -> Result<TrackObservations> {
    let (header, rows) = parse_csv(text)?;
    let ok = header == ["t", "x", "y"] || header == ["t", "x", "y", "v", "theta"];
    if !ok {
        return Err(Error::InvalidConfig(format!("observation header must be t,x,y[,v,theta], got {}", header.join(","))));
    }
    let times = rows.iter().map(|r| r[0]).collect();
    let values = rows.iter().map(|r| r[1..].to_vec()).collect();
    TrackObservations::new(source, times, values)
}

pub fn load_observations(path: &Path) -> Result<TrackObservations> {
    parse_observations(&std::fs::read_to_string(path)?, &path.display().to_string())
}

pub fn write_observations<W: Write>(mut w: W, obs: &TrackObservations) -> Result<()> {
    let full = obs.values.first().is_some_and(|v| v.len() >= 4);
    writeln!(w, "{}", if full { "t,x,y,v,theta" } else { "t,x,y" })?;
    for (t, v) in obs.times.iter().zip(&obs.values) {
        let cols = if full { &v[..4] } else { &v[..2] };
        let cells: Vec<String> = std::iter::once(*t).chain(cols.iter().copied()).map(fmt_f64).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_observations(path: &Path, obs: &TrackObservations) -> Result<()> {
    write_observations(BufWriter::new(File::create(path)?), obs)
}

/// Parses an ego trajectory `t,x,y,theta`.
pub fn parse_poses(text: &str) -> Result<Vec<Pose>> {
    let (header, rows) = parse_csv(text)?;
    if header != ["t", "x", "y", "theta"] {
        return Err(Error::InvalidConfig(format!("ego header must be t,x,y,theta, got {}", header.join(","))));
    }
    Ok(rows
        .iter()
        .map(|r| Pose {
            t: r[0],
            x: r[1],
            y: r[2],
            theta: r[3],
        })
        .collect())
}

pub fn load_poses(path: &Path) -> Result<Vec<Pose>> {
    parse_poses(&std::fs::read_to_string(path)?)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Record of one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<PathBuf>,
    pub stages: Vec<StageTiming>,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            stages: Vec::new(),
        }
    }

    /// Records the canonical path and hash of an input file.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputHash {
            path: path.canonicalize()?,
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Runs `f`, recording its wall-clock time under `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages.push(StageTiming {
            stage: stage.into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    /// Paths whose current hash differs from the recorded one.
    pub fn changed_inputs(&self) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for i in &self.inputs {
            if sha256_file(&i.path)? != i.sha256 {
                out.push(i.path.clone());
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        to_json_17(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunManifest::from_json(&std::fs::read_to_string(path)?)
    }
}

/// `<output>.manifest.json` next to an output file.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        let values = vec![0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, 0.0];
        let text = to_json_17(&values);
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, values);
    }

    fn frame(k: usize) -> HybridMixture {
        let g = Gaussian::from_slices(&[1.0 / 3.0, -2.0], &[&[0.1, 0.02], &[0.02, 0.3]]).unwrap();
        let mut mix = HybridMixture::new(
            vec![HybridMixand::new(0.7, "a", g.clone()), HybridMixand::new(0.3, "b", g)],
            k,
        )
        .unwrap();
        mix.mixands[1].gaussian.mean[0] = std::f64::consts::PI;
        mix
    }

    #[test]
    fn frames_round_trip_bit_exact() {
        let frames = vec![frame(1), frame(2), frame(3)];
        let mut buf = Vec::new();
        write_frames(&mut buf, &frames, 0.1).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("{\"k\":1,\"t\":"));
        let back = read_frames(buf.as_slice()).unwrap();
        assert_eq!(back.frames, frames);
        assert!((back.dt().unwrap() - 0.1).abs() < 1e-15);
        let mut again = Vec::new();
        write_frames(&mut again, &back.frames, 0.1).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn frames_must_be_consecutive() {
        let mut buf = Vec::new();
        write_frames(&mut buf, &[frame(1), frame(3)], 0.1).unwrap();
        assert!(matches!(read_frames(buf.as_slice()), Err(Error::MisalignedTimestamps(_))));
    }

    #[test]
    fn particles_round_trip() {
        let set = ParticleSet::sample(&frame(0), 50, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        save_particles(&path, &[set.clone(), set.clone()], 1, 0.1).unwrap();
        let back = load_particles(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].0, 2);
        assert_eq!(back[0].2, set);
    }

    #[test]
    fn metric_csv_round_trip() {
        let rows = vec![
            MetricRow { step: 1, t: 0.1, value: 1.0 / 7.0 },
            MetricRow { step: 2, t: 0.2, value: -3.5 },
        ];
        let mut buf = Vec::new();
        write_metric_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,t,value\n"));
        assert_eq!(read_metric_csv(&text).unwrap(), rows);
    }

    #[test]
    fn observations_csv() {
        let obs = parse_observations("t,x,y\n0.1,1,2\n0.2,1.5,2.5\n", "s").unwrap();
        assert_eq!(obs.values[1], vec![1.5, 2.5]);
        let full = parse_observations("t,x,y,v,theta\n0.1,1,2,10,0\n", "s").unwrap();
        let mut buf = Vec::new();
        write_observations(&mut buf, &full).unwrap();
        assert_eq!(parse_observations(std::str::from_utf8(&buf).unwrap(), "s").unwrap(), full);
        assert!(parse_observations("t,x\n0.1,1\n", "s").is_err());
        assert!(parse_observations("t,x,y\n0.2,1,2\n0.1,1,2\n", "s").is_err());
        assert!(parse_observations("t,x,y\n0.1,1\n", "s").is_err());
    }

    #[test]
    fn ego_poses() {
        let poses = parse_poses("t,x,y,theta\n0.1,1,2,0.5\n").unwrap();
        assert_eq!(poses[0].theta, 0.5);
        assert!(parse_poses("t,x,y\n0.1,1,2\n").is_err());
    }

    #[test]
    fn manifest_detects_changed_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.json");
        std::fs::write(&input, "{}").unwrap();
        let mut m = RunManifest::new("run", Some(3), serde_json::json!({"e_res_max": 0.1}));
        m.add_input(&input).unwrap();
        let v = m.time("stage", || 41 + 1);
        assert_eq!(v, 42);
        assert_eq!(m.stages[0].stage, "stage");
        let path = manifest_path(&dir.path().join("frames.jsonl"));
        assert!(path.ends_with("frames.jsonl.manifest.json"));
        m.save(&path).unwrap();
        let back = RunManifest::load(&path).unwrap();
        assert_eq!(back, m);
        assert!(back.changed_inputs().unwrap().is_empty());
        std::fs::write(&input, "{\"a\":1}").unwrap();
        assert_eq!(back.changed_inputs().unwrap(), vec![input.canonicalize().unwrap()]);
    }
}
