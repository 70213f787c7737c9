//! Episode logs, the on-disk dataset format, collection policies and the
//! training windows extracted from logs.
//!
//! A dataset is a directory holding `manifest.txt` (plain `key = value`
//! lines) and one `episode_NNNNN.bin` per episode.

mod collect;
mod windows;

pub use collect::{collect, CollectConfig, CollectionPolicy, CorrelatedRandomWalk, PolicyFactory, RandomWalk, StartMode};
pub use windows::{extract_windows, Window, WindowKind};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::binio::{open_versioned, read_file, write_file, Writer};
use crate::error::{DataError, FormatError};
use crate::geometry::Pose2;
use crate::sim::{DynamicsVariant, Observation};

const EPISODE_MAGIC: &[u8; 8] = b"HINTEPIS";
const EPISODE_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.txt";
const MANIFEST_FORMAT: &str = "hint-dataset";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TerminalCause {
    Collision,
    Goal,
    Timeout,
}

impl TerminalCause {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminalCause::Collision => "collision",
            TerminalCause::Goal => "goal",
            TerminalCause::Timeout => "timeout",
        }
    }

    fn code(&self) -> u8 {
        match self {
            TerminalCause::Collision => 0,
            TerminalCause::Goal => 1,
            TerminalCause::Timeout => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self, FormatError> {
        match c {
            0 => Ok(TerminalCause::Collision),
            1 => Ok(TerminalCause::Goal),
            2 => Ok(TerminalCause::Timeout),
            _ => Err(FormatError::Malformed(format!("unknown terminal cause code {c}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMeta {
    pub variant: DynamicsVariant,
    pub world_seed: u64,
    pub policy: String,
    pub dt: f64,
    pub speed: f64,
    pub start: Pose2,
    /// Frames stacked per observation when rebuilding observations.
    pub frames_per_obs: usize,
    /// Zero when no frames were recorded.
    pub frame_rows: usize,
    pub frame_cols: usize,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl EpisodeMeta {
    pub fn frame_len(&self) -> usize {
        self.frame_rows * self.frame_cols
    }

    pub fn has_frames(&self) -> bool {
        self.frame_len() > 0
    }
}

/// One logged episode. Per step `t` it holds the newest frame rendered before
/// the action, the robot state, the executed (clamped) action, the world pose
/// after the step and the reward of that pose.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub meta: EpisodeMeta,
    pub frames: Vec<f64>,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub poses: Vec<Pose2>,
    pub rewards: Vec<f64>,
    pub terminal: TerminalCause,
    pub clamped_steps: usize,
}

impl EpisodeRecord {
    pub fn empty(meta: EpisodeMeta) -> Self {
        Self {
            meta,
            frames: Vec::new(),
            states: Vec::new(),
            actions: Vec::new(),
            poses: Vec::new(),
            rewards: Vec::new(),
            terminal: TerminalCause::Timeout,
            clamped_steps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// World pose before step `t`.
    pub fn pose_before(&self, t: usize) -> Pose2 {
        if t == 0 {
            self.meta.start
        } else {
            self.poses[t - 1]
        }
    }

    pub fn state(&self, t: usize) -> &[f64] {
        let d = self.meta.state_dim;
        &self.states[t * d..(t + 1) * d]
    }

    pub fn action(&self, t: usize) -> &[f64] {
        let d = self.meta.action_dim;
        &self.actions[t * d..(t + 1) * d]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.meta.frame_len();
        &self.frames[t * n..(t + 1) * n]
    }

    /// Observation seen before step `t`: the last `frames_per_obs` frames,
    /// oldest first, repeating frame 0 before the episode start.
    pub fn observation(&self, t: usize) -> Result<Observation, DataError> {
        if !self.meta.has_frames() {
            return Err(DataError::Missing("observations"));
        }
        let m = &self.meta;
        let mut obs = Observation::zeros(m.frames_per_obs, m.frame_rows, m.frame_cols);
        self.write_observation(t, &mut obs.data);
        Ok(obs)
    }

    /// Writes the observation for step `t` into `out` (length frames*rows*cols).
    pub fn write_observation(&self, t: usize, out: &mut [f64]) {
        let f = self.meta.frames_per_obs;
        let n = self.meta.frame_len();
        for k in 0..f {
            let src = t.saturating_sub(f - 1 - k);
            out[k * n..(k + 1) * n].copy_from_slice(self.frame(src));
        }
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        let l = self.len();
        let m = &self.meta;
        let ok = self.rewards.len() == l
            && self.states.len() == l * m.state_dim
            && self.actions.len() == l * m.action_dim
            && self.frames.len() == l * m.frame_len()
            && m.action_dim > 0
            && m.frames_per_obs > 0;
        if !ok {
            return Err(FormatError::Malformed("per-step arrays disagree in length".into()));
        }
        if l == 0 {
            return Err(FormatError::Malformed("episode has no steps".into()));
        }
        let collided = self.rewards[l - 1] == -1.0;
        if collided != (self.terminal == TerminalCause::Collision) {
            return Err(FormatError::Malformed("terminal reward disagrees with terminal cause".into()));
        }
        if self.rewards[..l - 1].iter().any(|&r| r != 0.0) {
            return Err(FormatError::Malformed("non-terminal step carries a collision reward".into()));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let m = &self.meta;
        let mut w = Writer::new(EPISODE_MAGIC, EPISODE_VERSION);
        w.str(&m.variant.to_string());
        w.u64(m.world_seed);
        w.str(&m.policy);
        w.f64(m.dt);
        w.f64(m.speed);
        w.f64s(&[m.start.x, m.start.y, m.start.yaw]);
        for d in [m.frames_per_obs, m.frame_rows, m.frame_cols, m.state_dim, m.action_dim] {
            w.u32(d as u32);
        }
        w.u8(self.terminal.code());
        w.u64(self.clamped_steps as u64);
        w.u64(self.len() as u64);
        for t in 0..self.len() {
            if m.has_frames() {
                w.f64s(self.frame(t));
            }
            w.f64s(self.state(t));
            w.f64s(self.action(t));
            let p = self.poses[t];
            w.f64s(&[p.x, p.y, p.yaw, self.rewards[t]]);
        }
        w.finish()
    }

    pub fn decode(data: &[u8]) -> Result<Self, FormatError> {
        let mut r = open_versioned(data, EPISODE_MAGIC, "episode", EPISODE_VERSION)?;
        let variant_name = r.str()?;
        let variant = variant_name.parse().map_err(|e: crate::sim::UnknownVariant| FormatError::Malformed(e.to_string()))?;
        let world_seed = r.u64()?;
        let policy = r.str()?;
        let dt = r.f64()?;
        let speed = r.f64()?;
        let s = r.f64s(3)?;
        let start = Pose2 { x: s[0], y: s[1], yaw: s[2] };
        let mut dims = [0usize; 5];
        for d in dims.iter_mut() {
            *d = r.u32()? as usize;
        }
        let [frames_per_obs, frame_rows, frame_cols, state_dim, action_dim] = dims;
        let terminal = TerminalCause::from_code(r.u8()?)?;
        let clamped_steps = r.usize()?;
        let steps = r.usize()?;
        let meta = EpisodeMeta { variant, world_seed, policy, dt, speed, start, frames_per_obs, frame_rows, frame_cols, state_dim, action_dim };
        let mut rec = EpisodeRecord::empty(meta);
        rec.terminal = terminal;
        rec.clamped_steps = clamped_steps;
        let frame_len = frame_rows * frame_cols;
        let per_step = frame_len + state_dim + action_dim + 4;
        if steps.checked_mul(per_step * 8).is_none_or(|need| need > data.len()) {
            return Err(FormatError::Malformed(format!("step count {steps} exceeds file size")));
        }
        for _ in 0..steps {
            rec.frames.extend(r.f64s(frame_len)?);
            rec.states.extend(r.f64s(state_dim)?);
            rec.actions.extend(r.f64s(action_dim)?);
            let v = r.f64s(4)?;
            rec.poses.push(Pose2 { x: v[0], y: v[1], yaw: v[2] });
            rec.rewards.push(v[3]);
        }
        r.expect_end()?;
        rec.validate()?;
        Ok(rec)
    }

    /// CSV view: `step,x,y,yaw,action0..,reward`, one row per step with the
    /// post-step pose.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,x,y,yaw");
        for d in 0..self.meta.action_dim {
            let _ = write!(s, ",action{d}");
        }
        s.push_str(",reward\n");
        for t in 0..self.len() {
            let p = self.poses[t];
            let _ = write!(s, "{t},{},{},{}", p.x, p.y, p.yaw);
            for a in self.action(t) {
                let _ = write!(s, ",{a}");
            }
            let _ = writeln!(s, ",{}", self.rewards[t]);
        }
        s
    }
}

/// Summary stored beside the episodes and re-derived on load.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub episodes: usize,
    pub steps: usize,
    pub collisions: usize,
    pub goals: usize,
    pub variant: DynamicsVariant,
    pub policy: String,
    pub dt: f64,
    pub frames_per_obs: usize,
    pub frame_rows: usize,
    pub frame_cols: usize,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format = {MANIFEST_FORMAT}");
        let _ = writeln!(s, "version = {MANIFEST_VERSION}");
        let _ = writeln!(s, "episodes = {}", self.episodes);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "collisions = {}", self.collisions);
        let _ = writeln!(s, "goals = {}", self.goals);
        let _ = writeln!(s, "variant = {}", self.variant);
        let _ = writeln!(s, "policy = {}", self.policy);
        let _ = writeln!(s, "dt = {}", self.dt);
        let _ = writeln!(s, "frames_per_obs = {}", self.frames_per_obs);
        let _ = writeln!(s, "frame_rows = {}", self.frame_rows);
        let _ = writeln!(s, "frame_cols = {}", self.frame_cols);
        let _ = writeln!(s, "state_dim = {}", self.state_dim);
        let _ = writeln!(s, "action_dim = {}", self.action_dim);
        s
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let kv = parse_key_values(text)?;
        let get = |k: &str| kv.get(k).ok_or_else(|| FormatError::Malformed(format!("manifest lacks `{k}`")));
        let num = |k: &str| -> Result<usize, FormatError> {
            get(k)?.parse().map_err(|_| FormatError::Malformed(format!("manifest `{k}` is not an integer")))
        };
        if get("format")? != MANIFEST_FORMAT {
            return Err(FormatError::BadMagic { expected: "dataset manifest" });
        }
        let version: u32 = get("version")?.parse().map_err(|_| FormatError::Malformed("bad manifest version".into()))?;
        if version != MANIFEST_VERSION {
            return Err(FormatError::VersionMismatch { found: version, expected: MANIFEST_VERSION });
        }
        Ok(Self {
            episodes: num("episodes")?,
            steps: num("steps")?,
            collisions: num("collisions")?,
            goals: num("goals")?,
            variant: get("variant")?.parse().map_err(|e: crate::sim::UnknownVariant| FormatError::Malformed(e.to_string()))?,
            policy: get("policy")?.clone(),
            dt: get("dt")?.parse().map_err(|_| FormatError::Malformed("manifest `dt` is not a number".into()))?,
            frames_per_obs: num("frames_per_obs")?,
            frame_rows: num("frame_rows")?,
            frame_cols: num("frame_cols")?,
            state_dim: num("state_dim")?,
            action_dim: num("action_dim")?,
        })
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub(crate) fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, FormatError> {
    let mut kv = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| FormatError::Malformed(format!("line {}: expected `key = value`", i + 1)))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(kv)
}

/// Episodes collected with one dynamics variant and one set of dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub episodes: Vec<EpisodeRecord>,
}

impl Dataset {
    pub fn new(episodes: Vec<EpisodeRecord>) -> Result<Self, DataError> {
        let ds = Self { episodes };
        ds.manifest()?;
        Ok(ds)
    }

    pub fn steps(&self) -> usize {
        self.episodes.iter().map(EpisodeRecord::len).sum()
    }

    pub fn manifest(&self) -> Result<Manifest, DataError> {
        let first = self.episodes.first().ok_or(DataError::Missing("episodes"))?;
        let m0 = &first.meta;
        for (i, e) in self.episodes.iter().enumerate() {
            let m = &e.meta;
            let checks = [
                ("frames_per_obs", m0.frames_per_obs, m.frames_per_obs),
                ("frame_rows", m0.frame_rows, m.frame_rows),
                ("frame_cols", m0.frame_cols, m.frame_cols),
                ("state_dim", m0.state_dim, m.state_dim),
                ("action_dim", m0.action_dim, m.action_dim),
            ];
            for (what, expected, found) in checks {
                if expected != found {
                    return Err(DataError::DimMismatch { what: format!("episode {i} {what}"), expected, found });
                }
            }
            if m.variant != m0.variant {
                return Err(DataError::ManifestMismatch(format!("episode {i} uses variant {} but episode 0 uses {}", m.variant, m0.variant)));
            }
        }
        let count = |c: TerminalCause| self.episodes.iter().filter(|e| e.terminal == c).count();
        Ok(Manifest {
            episodes: self.episodes.len(),
            steps: self.steps(),
            collisions: count(TerminalCause::Collision),
            goals: count(TerminalCause::Goal),
            variant: m0.variant,
            policy: m0.policy.clone(),
            dt: m0.dt,
            frames_per_obs: m0.frames_per_obs,
            frame_rows: m0.frame_rows,
            frame_cols: m0.frame_cols,
            state_dim: m0.state_dim,
            action_dim: m0.action_dim,
        })
    }

    pub fn has_observations(&self) -> bool {
        self.episodes.first().is_some_and(|e| e.meta.has_frames())
    }

    pub fn save(&self, dir: &Path) -> Result<Manifest, DataError> {
        let manifest = self.manifest()?;
        std::fs::create_dir_all(dir).map_err(|source| FormatError::Io { path: dir.to_path_buf(), source })?;
        for (i, e) in self.episodes.iter().enumerate() {
            write_file(&dir.join(episode_file(i)), &e.encode())?;
        }
        write_file(&dir.join(MANIFEST), manifest.to_text().as_bytes())?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let text = read_file(&dir.join(MANIFEST))?;
        let text = String::from_utf8(text).map_err(|_| FormatError::Malformed("manifest is not UTF-8".into()))?;
        let stored = Manifest::parse(&text)?;
        let mut episodes = Vec::with_capacity(stored.episodes);
        for i in 0..stored.episodes {
            let path = dir.join(episode_file(i));
            let bytes = read_file(&path)?;
            let rec = EpisodeRecord::decode(&bytes).map_err(|e| FormatError::Malformed(format!("{}: {e}", path.display())).keep_kind(e))?;
            episodes.push(rec);
        }
        let ds = Self { episodes };
        let derived = ds.manifest()?;
        if derived != stored {
            return Err(DataError::ManifestMismatch(format!(
                "manifest says {} episodes / {} steps / {} collisions, files hold {} / {} / {}",
                stored.episodes, stored.steps, stored.collisions, derived.episodes, derived.steps, derived.collisions
            )));
        }
        Ok(ds)
    }

    /// Writes `episode_NNNNN.csv` files into `dir`.
    pub fn export_csv(&self, dir: &Path) -> Result<(), DataError> {
        std::fs::create_dir_all(dir).map_err(|source| FormatError::Io { path: dir.to_path_buf(), source })?;
        for (i, e) in self.episodes.iter().enumerate() {
            let path = dir.join(format!("episode_{i:05}.csv"));
            write_file(&path, e.to_csv().as_bytes())?;
        }
        Ok(())
    }
}

fn episode_file(i: usize) -> String {
    format!("episode_{i:05}.bin")
}

impl FormatError {
    /// Keeps the typed variant of `inner` (checksum, truncation, version)
    /// and only falls back to `self` for malformed content.
    fn keep_kind(self, inner: FormatError) -> FormatError {
        match inner {
            FormatError::Malformed(_) => self,
            other => other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{FnPolicy, RenderConfig, SimConfig, Simulator, World, WorldConfig};

    fn small_dataset(frames: bool) -> Dataset {
        let cfg = WorldConfig { rng_seed: 5, ..Default::default() };
        let render = RenderConfig { rows: 4, cols: 8, ..Default::default() };
        let sim = Simulator::new(World::generate(&cfg).unwrap(), DynamicsVariant::Lag(2), SimConfig::default(), render);
        let eps = (0..3)
            .map(|i| {
                let mut p = FnPolicy::new("sine", move |c| ((c.step + i) as f64).sin());
                crate::sim::run_episode(&mut p, &sim, cfg.start_cells()[i], 20, frames).unwrap()
            })
            .collect();
        Dataset::new(eps).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ds = small_dataset(true);
        let dir = tempfile::tempdir().unwrap();
        let m = ds.save(dir.path()).unwrap();
        assert_eq!(m.episodes, 3);
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
        for (a, b) in ds.episodes.iter().zip(&back.episodes) {
            assert_eq!(a.encode(), b.encode());
        }
    }

    #[test]
    fn corruption_is_detected_with_distinct_errors() {
        let ds = small_dataset(false);
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let path = dir.path().join(episode_file(1));
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 0x01;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(Dataset::load(dir.path()), Err(DataError::Format(FormatError::Checksum { .. }))));

        std::fs::write(&path, &good[..good.len() - 20]).unwrap();
        assert!(matches!(Dataset::load(dir.path()), Err(DataError::Format(FormatError::Truncated { .. }))));

        let mut newer = good.clone();
        newer[8] = 2;
        std::fs::write(&path, &newer).unwrap();
        assert!(matches!(Dataset::load(dir.path()), Err(DataError::Format(FormatError::VersionMismatch { found: 2, .. }))));

        std::fs::write(&path, &good).unwrap();
        let manifest = dir.path().join(MANIFEST);
        let text = std::fs::read_to_string(&manifest).unwrap().replace("episodes = 3", "episodes = 2");
        std::fs::write(&manifest, text).unwrap();
        assert!(matches!(Dataset::load(dir.path()), Err(DataError::ManifestMismatch(_))));
    }

    #[test]
    fn csv_has_header_and_one_row_per_step() {
        let ds = small_dataset(false);
        let csv = ds.episodes[0].to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "step,x,y,yaw,action0,reward");
        assert_eq!(lines.count(), ds.episodes[0].len());
    }

    #[test]
    fn mixed_dims_rejected() {
        let mut a = small_dataset(false).episodes;
        a[1].meta.state_dim = 7;
        assert!(matches!(Dataset::new(a), Err(DataError::DimMismatch { .. })));
    }
}
