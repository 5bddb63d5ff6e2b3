//! Datasets of regularly sampled 2-feature sequences: synthetic spirals and
//! springs, real or synthetic solar curves, prefix subsampling, stratified
//! 60/20/20 splits and a portable CSV bundle format.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Every dataset in this crate has two features per time step.
pub const FEATURES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpringKind {
    Undamped = 1,
    Damped = 2,
    ExpDamped = 3,
}

impl SpringKind {
    pub const ALL: [SpringKind; 3] = [SpringKind::Undamped, SpringKind::Damped, SpringKind::ExpDamped];

    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(SpringKind::Undamped),
            2 => Ok(SpringKind::Damped),
            3 => Ok(SpringKind::ExpDamped),
            other => Err(Error::invalid(format!("spring kind must be 1, 2 or 3, got {other}"))),
        }
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn label(self) -> String {
        format!("spring{}", self.index())
    }

    /// Amplitude envelope at time `t`.
    pub fn envelope(self, t: f64) -> f64 {
        match self {
            SpringKind::Undamped => 1.0,
            SpringKind::Damped => 1.0 - t / 15.0,
            SpringKind::ExpDamped => (-0.3 * t).exp(),
        }
    }
}

/// Sequences `[num_data, seq_len, 2]` sharing one time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    num_data: usize,
    times: Vec<f64>,
    labels: Option<Vec<String>>,
    split: Option<Vec<Split>>,
}

/// Sequences of a mini-batch laid out per time step: `steps[t]` is `[batch, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub indices: Vec<usize>,
    pub times: Vec<f64>,
    pub steps: Vec<Tensor>,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.steps.len()
    }
}

impl Dataset {
    pub fn new(values: Vec<f64>, num_data: usize, times: Vec<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidGrid("dataset times must be non-empty and strictly increasing".into()));
        }
        if values.len() != num_data * times.len() * FEATURES {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                lhs: vec![num_data, times.len(), FEATURES],
                rhs: vec![values.len()],
            });
        }
        if let Some(l) = &labels {
            if l.len() != num_data {
                return Err(Error::invalid(format!("{} labels for {num_data} samples", l.len())));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(Self {
            values,
            num_data,
            times,
            labels,
            split: None,
        })
    }

    pub fn num_data(&self) -> usize {
        self.num_data
    }

    pub fn seq_len(&self) -> usize {
        self.times.len()
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.num_data, self.seq_len(), FEATURES]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn split(&self) -> Option<&[Split]> {
        self.split.as_deref()
    }

    pub fn with_split(mut self, split: Vec<Split>) -> Result<Self> {
        if split.len() != self.num_data {
            return Err(Error::invalid(format!("{} split tags for {} samples", split.len(), self.num_data)));
        }
        self.split = Some(split);
        Ok(self)
    }

    /// Flat `[seq_len * 2]` values of sample `i`.
    pub fn sample_values(&self, i: usize) -> &[f64] {
        let w = self.seq_len() * FEATURES;
        &self.values[i * w..(i + 1) * w]
    }

    /// Sample `i` as a `[seq_len, 2]` tensor.
    pub fn sample(&self, i: usize) -> Tensor {
        Tensor::new(vec![self.seq_len(), FEATURES], self.sample_values(i).to_vec()).expect("sample shape")
    }

    /// Indices assigned to `which`, in dataset order.
    pub fn indices(&self, which: Split) -> Result<Vec<usize>> {
        let split = self.split.as_ref().ok_or_else(|| Error::invalid("dataset has no split assignment"))?;
        Ok(split.iter().enumerate().filter(|(_, s)| **s == which).map(|(i, _)| i).collect())
    }

    pub fn split_counts(&self) -> Option<(usize, usize, usize)> {
        let s = self.split.as_ref()?;
        let count = |w| s.iter().filter(|x| **x == w).count();
        Some((count(Split::Train), count(Split::Val), count(Split::Test)))
    }

    pub fn batch(&self, indices: &[usize]) -> Result<SequenceBatch> {
        if indices.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.num_data) {
            return Err(Error::invalid(format!("sample index {bad} out of range")));
        }
        let b = indices.len();
        let steps = (0..self.seq_len())
            .map(|t| {
                let mut data = Vec::with_capacity(b * FEATURES);
                for &i in indices {
                    let s = self.sample_values(i);
                    data.extend_from_slice(&s[t * FEATURES..(t + 1) * FEATURES]);
                }
                Tensor::new(vec![b, FEATURES], data).expect("batch shape")
            })
            .collect();
        Ok(SequenceBatch {
            indices: indices.to_vec(),
            times: self.times.clone(),
            steps,
        })
    }

    /// Keeps only samples `indices` (labels and split follow).
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let mut values = Vec::with_capacity(indices.len() * self.seq_len() * FEATURES);
        for &i in indices {
            if i >= self.num_data {
                return Err(Error::invalid(format!("sample index {i} out of range")));
            }
            values.extend_from_slice(self.sample_values(i));
        }
        let labels = self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i].clone()).collect());
        let mut out = Dataset::new(values, indices.len(), self.times.clone(), labels)?;
        out.split = self.split.as_ref().map(|s| indices.iter().map(|&i| s[i]).collect());
        Ok(out)
    }
}

/// Parameters of the spiral generator. A sample is an Archimedean spiral
/// `r = a + b·θ` traced over `θ ∈ [0, theta_max]`; counterclockwise samples are
/// `(r cos θ, r sin θ)` and clockwise samples mirror them in `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpiralConfig {
    pub a_range: (f64, f64),
    pub b_range: (f64, f64),
    pub theta_max: f64,
    /// Model-time length of a full sequence.
    pub time_span: f64,
}

impl Default for SpiralConfig {
    fn default() -> Self {
        Self {
            a_range: (0.3, 0.7),
            b_range: (0.08, 0.12),
            theta_max: 6.0 * PI,
            time_span: 10.0,
        }
    }
}

fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![start];
    }
    let step = (end - start) / (n - 1) as f64;
    (0..n).map(|i| start + step * i as f64).collect()
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Noise-free spiral points, flattened `[len(thetas), 2]`.
pub fn spiral_curve(a: f64, b: f64, clockwise: bool, thetas: &[f64]) -> Vec<f64> {
    let sign = if clockwise { -1.0 } else { 1.0 };
    thetas
        .iter()
        .flat_map(|&th| {
            let r = a + b * th;
            [r * th.cos(), sign * r * th.sin()]
        })
        .collect()
}

pub fn gen_spirals(n: usize, seq_len: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    gen_spirals_with(&SpiralConfig::default(), n, seq_len, noise_std, seed)
}

/// `n/2` counterclockwise then `n/2` clockwise spirals with additive Gaussian
/// noise on every coordinate.
pub fn gen_spirals_with(cfg: &SpiralConfig, n: usize, seq_len: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::invalid(format!("spiral count must be even and positive, got {n}")));
    }
    if seq_len < 2 {
        return Err(Error::invalid("spirals need at least 2 time steps"));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::invalid("noise_std must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).expect("valid normal");
    let times = linspace(0.0, cfg.time_span, seq_len);
    let thetas: Vec<f64> = times.iter().map(|t| t / cfg.time_span * cfg.theta_max).collect();
    let mut values = Vec::with_capacity(n * seq_len * FEATURES);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let clockwise = i >= n / 2;
        let a = uniform(&mut rng, cfg.a_range);
        let b = uniform(&mut rng, cfg.b_range);
        let mut pts = spiral_curve(a, b, clockwise, &thetas);
        if noise_std > 0.0 {
            for p in pts.iter_mut() {
                *p += noise.sample(&mut rng);
            }
        }
        values.extend(pts);
        labels.push(if clockwise { "cw" } else { "ccw" }.to_string());
    }
    Dataset::new(values, n, times, Some(labels))
}

/// Parameters of the spring generator: `y = A·env(t)·sin(ωt + φ)` with a
/// per-sample amplitude `A ~ N(amp_mean, amp_std²)` and phase `φ ~ N(0, phase_std²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpringConfig {
    pub seq_len: usize,
    pub t_max: f64,
    pub omega: f64,
    pub amp_mean: f64,
    pub amp_std: f64,
    pub phase_std: f64,
}

impl Default for SpringConfig {
    fn default() -> Self {
        Self {
            seq_len: 300,
            t_max: 10.0,
            omega: 2.0 * PI / 2.5,
            amp_mean: 1.0,
            amp_std: 0.1,
            phase_std: 0.5,
        }
    }
}

/// One spring trajectory: features `(t / t_max, y(t))` flattened.
pub fn spring_curve(kind: SpringKind, amplitude: f64, phase: f64, cfg: &SpringConfig, times: &[f64]) -> Vec<f64> {
    times
        .iter()
        .flat_map(|&t| {
            let y = amplitude * kind.envelope(t) * (cfg.omega * t + phase).sin();
            [t / cfg.t_max, y]
        })
        .collect()
}

pub fn gen_springs(kinds: &[SpringKind], n: usize, seed: u64) -> Result<Dataset> {
    gen_springs_with(&SpringConfig::default(), kinds, n, seed)
}

/// Springs of the given kinds in near-equal proportions: when `n` is not a
/// multiple of the number of kinds the first kinds get one extra sample.
pub fn gen_springs_with(cfg: &SpringConfig, kinds: &[SpringKind], n: usize, seed: u64) -> Result<Dataset> {
    let mut kinds = kinds.to_vec();
    kinds.sort();
    kinds.dedup();
    if kinds.is_empty() {
        return Err(Error::invalid("at least one spring kind is required"));
    }
    if n < kinds.len() {
        return Err(Error::invalid(format!("need at least one sample per kind, got n={n}")));
    }
    if cfg.seq_len < 2 {
        return Err(Error::invalid("springs need at least 2 time steps"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = Normal::new(cfg.amp_mean, cfg.amp_std).map_err(|e| Error::invalid(e.to_string()))?;
    let phase = Normal::new(0.0, cfg.phase_std).map_err(|e| Error::invalid(e.to_string()))?;
    let times = linspace(0.0, cfg.t_max, cfg.seq_len);
    let per_kind = n / kinds.len();
    let extra = n % kinds.len();
    let mut values = Vec::with_capacity(n * cfg.seq_len * FEATURES);
    let mut labels = Vec::with_capacity(n);
    for (k, &kind) in kinds.iter().enumerate() {
        let count = per_kind + usize::from(k < extra);
        for _ in 0..count {
            let a = amp.sample(&mut rng);
            let p = phase.sample(&mut rng);
            values.extend(spring_curve(kind, a, p, cfg, &times));
            labels.push(kind.label());
        }
    }
    Dataset::new(values, n, times, Some(labels))
}

/// Solar day length in samples (30-minute resolution).
pub const SOLAR_STEPS: usize = 48;
/// Model-time spacing of consecutive solar samples.
pub const SOLAR_DT: f64 = 0.1;

fn solar_times() -> Vec<f64> {
    (0..SOLAR_STEPS).map(|k| k as f64 * SOLAR_DT).collect()
}

fn time_of_day(k: usize) -> f64 {
    k as f64 / (SOLAR_STEPS - 1) as f64
}

/// Reads `day,t0,...,t47`, one row per day. Power is min-max normalised over
/// the whole file (a zero range maps to zeros); time of day is scaled to [0, 1].
pub fn load_solar_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let parse_err = |row: Option<usize>, msg: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(None, e.to_string()))?;
    let header = reader.headers().map_err(|e| parse_err(Some(1), e.to_string()))?.clone();
    if header.len() != SOLAR_STEPS + 1 || &header[0] != "day" {
        return Err(parse_err(
            Some(1),
            format!("expected header `day,t0,...,t47` ({} columns), got {} columns", SOLAR_STEPS + 1, header.len()),
        ));
    }
    let mut powers = Vec::new();
    let mut days = 0;
    for (i, record) in reader.records().enumerate() {
        // Row numbers are 1-based file lines; the header is line 1.
        let row = i + 2;
        let record = record.map_err(|e| parse_err(Some(row), e.to_string()))?;
        if record.len() != SOLAR_STEPS + 1 {
            return Err(parse_err(
                Some(row),
                format!("expected {} power values, found {}", SOLAR_STEPS, record.len().saturating_sub(1)),
            ));
        }
        for (k, cell) in record.iter().skip(1).enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(Some(row), format!("column t{k}: `{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(Some(row), format!("column t{k}: non-finite value")));
            }
            powers.push(v);
        }
        days += 1;
    }
    if days == 0 {
        return Err(parse_err(None, "no data rows".into()));
    }
    let lo = powers.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = powers.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let mut values = Vec::with_capacity(days * SOLAR_STEPS * FEATURES);
    for day in powers.chunks(SOLAR_STEPS) {
        for (k, &p) in day.iter().enumerate() {
            let norm = if range > 0.0 { (p - lo) / range } else { 0.0 };
            values.extend([time_of_day(k), norm]);
        }
    }
    Dataset::new(values, days, solar_times(), None)
}

/// Sunrise/sunset-clamped squared-sine daily production curve.
pub fn solar_curve(peak: f64, t_rise: f64, t_set: f64, tod: f64) -> f64 {
    if tod < t_rise || tod > t_set {
        return 0.0;
    }
    let s = (PI * (tod - t_rise) / (t_set - t_rise)).sin().max(0.0);
    peak * s * s
}

/// Stand-in for measured solar data: bell-shaped days with random peak,
/// sunrise and sunset.
pub fn gen_synthetic_solar(days: usize, seed: u64) -> Result<Dataset> {
    if days == 0 {
        return Err(Error::invalid("days must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(days * SOLAR_STEPS * FEATURES);
    for _ in 0..days {
        let c = rng.random_range(0.6..=1.0);
        let rise = rng.random_range(0.2..=0.3);
        let set = rng.random_range(0.7..=0.8);
        for k in 0..SOLAR_STEPS {
            let tod = time_of_day(k);
            values.extend([tod, solar_curve(c, rise, set, tod)]);
        }
    }
    Dataset::new(values, days, solar_times(), None)
}

/// Prefix of the first `m` steps plus the held-out remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsample {
    pub observed: Dataset,
    pub tail_times: Vec<f64>,
    /// `[num_data, seq_len - m, 2]` flattened.
    pub tail_values: Vec<f64>,
}

impl Subsample {
    pub fn tail_len(&self) -> usize {
        self.tail_times.len()
    }

    pub fn tail_sample(&self, i: usize) -> &[f64] {
        let w = self.tail_len() * FEATURES;
        &self.tail_values[i * w..(i + 1) * w]
    }
}

/// Keeps the first `m` time steps of every sequence.
pub fn subsample(ds: &Dataset, m: usize) -> Result<Subsample> {
    let len = ds.seq_len();
    if m == 0 || m > len {
        return Err(Error::invalid(format!("cannot keep {m} of {len} time steps")));
    }
    let mut head = Vec::with_capacity(ds.num_data * m * FEATURES);
    let mut tail = Vec::with_capacity(ds.num_data * (len - m) * FEATURES);
    for i in 0..ds.num_data {
        let s = ds.sample_values(i);
        head.extend_from_slice(&s[..m * FEATURES]);
        tail.extend_from_slice(&s[m * FEATURES..]);
    }
    let mut observed = Dataset::new(head, ds.num_data, ds.times[..m].to_vec(), ds.labels.clone())?;
    observed.split = ds.split.clone();
    Ok(Subsample {
        observed,
        tail_times: ds.times[m..].to_vec(),
        tail_values: tail,
    })
}

/// Train/validation/test sizes `(round(0.6n), round(0.2n), rest)`.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (0.6 * n as f64).round() as usize;
    let val = (0.2 * n as f64).round() as usize;
    (train, val, n - train - val)
}

/// Seeded 60/20/20 partition. With labels, samples are shuffled within each
/// label and interleaved proportionally before cutting, so each label's
/// share of every partition stays within one sample of its overall share.
pub fn split(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let n = ds.num_data;
    if n < 5 {
        return Err(Error::invalid(format!("need at least 5 samples to split, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<usize> = match &ds.labels {
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            idx
        }
        Some(labels) => {
            let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
            for (i, l) in labels.iter().enumerate() {
                match groups.iter_mut().find(|(g, _)| g == l) {
                    Some((_, v)) => v.push(i),
                    None => groups.push((l.clone(), vec![i])),
                }
            }
            groups.sort_by(|a, b| a.0.cmp(&b.0));
            let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
            for (g, (_, members)) in groups.iter_mut().enumerate() {
                members.shuffle(&mut rng);
                let size = members.len() as f64;
                for (j, &i) in members.iter().enumerate() {
                    keyed.push(((j as f64 + 0.5) / size, g, i));
                }
            }
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            keyed.into_iter().map(|(_, _, i)| i).collect()
        }
    };
    let (train, val, _) = split_sizes(n);
    let mut assignment = vec![Split::Test; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = if pos < train {
            Split::Train
        } else if pos < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    ds.clone().with_split(assignment)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `meta.csv`, `times.csv` and `values.csv` into `dir`.
pub fn write_bundle(dir: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut meta = format!(
        "# num_data={} seq_len={} features={}\nsample,label,split\n",
        ds.num_data,
        ds.seq_len(),
        FEATURES
    );
    for i in 0..ds.num_data {
        let label = ds.labels.as_ref().map(|l| l[i].as_str()).unwrap_or("");
        let split = ds.split.as_ref().map(|s| s[i].as_str()).unwrap_or("");
        meta.push_str(&format!("{i},{label},{split}\n"));
    }
    let path = dir.join("meta.csv");
    fs::write(&path, meta).map_err(|e| Error::io(&path, e))?;

    let mut times = String::from("t\n");
    for &t in &ds.times {
        times.push_str(&fmt_f64(t));
        times.push('\n');
    }
    let path = dir.join("times.csv");
    fs::write(&path, times).map_err(|e| Error::io(&path, e))?;

    let mut values = String::with_capacity(ds.values.len() * 24);
    for i in 0..ds.num_data {
        let row: Vec<String> = ds.sample_values(i).iter().map(|&v| fmt_f64(v)).collect();
        values.push_str(&row.join(","));
        values.push('\n');
    }
    let path = dir.join("values.csv");
    fs::write(&path, values).map_err(|e| Error::io(&path, e))
}

/// Reads a bundle written by [`write_bundle`].
pub fn read_bundle(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let parse = |path: &Path, row: Option<usize>, msg: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        msg,
    };

    let meta_path = dir.join("meta.csv");
    let meta = read_to_string(&meta_path)?;
    let mut lines = meta.lines();
    let first = lines.next().ok_or_else(|| parse(&meta_path, Some(1), "empty file".into()))?;
    let mut num_data = None;
    let mut seq_len = None;
    for kv in first.trim_start_matches('#').split_whitespace() {
        match kv.split_once('=') {
            Some(("num_data", v)) => num_data = v.parse::<usize>().ok(),
            Some(("seq_len", v)) => seq_len = v.parse::<usize>().ok(),
            _ => {}
        }
    }
    let (num_data, seq_len) = num_data
        .zip(seq_len)
        .ok_or_else(|| parse(&meta_path, Some(1), "missing `# num_data=.. seq_len=..` line".into()))?;
    if lines.next() != Some("sample,label,split") {
        return Err(parse(&meta_path, Some(2), "expected header `sample,label,split`".into()));
    }
    let mut labels = Vec::with_capacity(num_data);
    let mut splits = Vec::with_capacity(num_data);
    for (i, line) in lines.enumerate() {
        let row = i + 3;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 3 {
            return Err(parse(&meta_path, Some(row), format!("expected 3 columns, got {}", cells.len())));
        }
        labels.push(cells[1].to_string());
        if !cells[2].is_empty() {
            splits.push(cells[2].parse::<Split>().map_err(|e| parse(&meta_path, Some(row), e.to_string()))?);
        }
    }
    if labels.len() != num_data {
        return Err(parse(&meta_path, None, format!("{} rows for num_data={num_data}", labels.len())));
    }

    let times_path = dir.join("times.csv");
    let times_text = read_to_string(&times_path)?;
    let times = times_text
        .lines()
        .skip(1)
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| parse(&times_path, Some(i + 2), e.to_string()))
        })
        .collect::<Result<Vec<f64>>>()?;
    if times.len() != seq_len {
        return Err(parse(&times_path, None, format!("{} times for seq_len={seq_len}", times.len())));
    }

    let values_path = dir.join("values.csv");
    let values_text = read_to_string(&values_path)?;
    let mut values = Vec::with_capacity(num_data * seq_len * FEATURES);
    let mut rows = 0;
    for (i, line) in values_text.lines().enumerate() {
        let before = values.len();
        for cell in line.split(',') {
            values.push(
                cell.trim()
                    .parse::<f64>()
                    .map_err(|e| parse(&values_path, Some(i + 1), e.to_string()))?,
            );
        }
        if values.len() - before != seq_len * FEATURES {
            return Err(parse(
                &values_path,
                Some(i + 1),
                format!("expected {} values, got {}", seq_len * FEATURES, values.len() - before),
            ));
        }
        rows += 1;
    }
    if rows != num_data {
        return Err(parse(&values_path, None, format!("{rows} rows for num_data={num_data}")));
    }

    let labels = if labels.iter().all(|l| l.is_empty()) { None } else { Some(labels) };
    let ds = Dataset::new(values, num_data, times, labels)?;
    if splits.is_empty() {
        Ok(ds)
    } else if splits.len() == num_data {
        ds.with_split(splits)
    } else {
        Err(parse(&meta_path, None, "split column is only partially filled".into()))
    }
}
