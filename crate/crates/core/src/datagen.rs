//! Seeded synthetic arithmetic datasets.
//!
//! A task applies one operation to two hidden operands: `a` is the sum of the
//! inputs labelled [`Role::A`], `b` the sum of those labelled [`Role::B`], and
//! `y = a ⋄ b`. Inputs labelled [`Role::Ignore`] only add noise dimensions.
//!
//! All randomness flows from ChaCha8 generators seeded from the caller's seed
//! with a fixed stream per purpose, so a `(task, split, seed)` triple always
//! yields the same bytes.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::tensor::Tensor;

/// Smallest divisor magnitude kept in DIV datasets.
pub const DIV_MIN_DIVISOR: f64 = 1e-3;
/// Redraws allowed per row before a DIV task is declared degenerate.
pub const MAX_RESAMPLE_ATTEMPTS: usize = 1000;
/// Default number of rows per dataset.
pub const DEFAULT_SAMPLE_COUNT: usize = 64_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum DistributionSpec {
    Uniform { low: f64, high: f64 },
    /// Normal restricted to `[mean − 3·std, mean + 3·std]`.
    TruncatedNormal { mean: f64, std: f64 },
    /// Density `rate·e^(−rate·v)` on `v ≥ 0`.
    Exponential { rate: f64 },
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DistributionSpec::Uniform { low, high } if !(low < high) || !low.is_finite() || !high.is_finite() => {
                config(format!("uniform bounds must satisfy low < high, got ({low}, {high})"))
            }
            DistributionSpec::TruncatedNormal { mean, std } if !(std > 0.0) || !mean.is_finite() || !std.is_finite() => {
                config(format!("truncated normal needs std > 0, got ({mean}, {std})"))
            }
            DistributionSpec::Exponential { rate } if !(rate > 0.0) || !rate.is_finite() => {
                config(format!("exponential rate must be positive, got {rate}"))
            }
            _ => Ok(()),
        }
    }

    /// Closed interval containing every sample.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            DistributionSpec::Uniform { low, high } => (low, high),
            DistributionSpec::TruncatedNormal { mean, std } => (mean - 3.0 * std, mean + 3.0 * std),
            DistributionSpec::Exponential { .. } => (0.0, f64::INFINITY),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DistributionSpec::Uniform { low, high } => 0.5 * (low + high),
            DistributionSpec::TruncatedNormal { mean, .. } => mean,
            DistributionSpec::Exponential { rate } => 1.0 / rate,
        }
    }

    fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        Ok(match *self {
            DistributionSpec::Uniform { low, high } => {
                Sampler::Uniform(Uniform::new(low, high).map_err(|e| Error::Config(e.to_string()))?)
            }
            DistributionSpec::TruncatedNormal { mean, std } => Sampler::Truncated {
                normal: Normal::new(mean, std).map_err(|e| Error::Config(e.to_string()))?,
                low: mean - 3.0 * std,
                high: mean + 3.0 * std,
            },
            DistributionSpec::Exponential { rate } => {
                Sampler::Exp(Exp::new(rate).map_err(|e| Error::Config(e.to_string()))?)
            }
        })
    }
}

enum Sampler {
    Uniform(Uniform<f64>),
    Truncated { normal: Normal<f64>, low: f64, high: f64 },
    Exp(Exp<f64>),
}

impl Sampler {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Uniform(u) => u.sample(rng),
            Sampler::Truncated { normal, low, high } => loop {
                let v = normal.sample(rng);
                if (*low..=*high).contains(&v) {
                    break v;
                }
            },
            Sampler::Exp(e) => e.sample(rng),
        }
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistributionSpec::Uniform { low, high } => write!(f, "U({low},{high})"),
            DistributionSpec::TruncatedNormal { mean, std } => write!(f, "N({mean},{std})"),
            DistributionSpec::Exponential { rate } => write!(f, "E({rate})"),
        }
    }
}

impl FromStr for DistributionSpec {
    type Err = Error;

    /// Parses `U(a,b)`, `N(mu,sigma)` or `E(lambda)`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse distribution `{s}`; expected U(a,b), N(mu,sigma) or E(lambda)"));
        let s_trim = s.trim();
        let (kind, rest) = s_trim.split_at_checked(1).ok_or_else(bad)?;
        let inner = rest.strip_prefix('(').and_then(|r| r.strip_suffix(')')).ok_or_else(bad)?;
        let nums = inner
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        let spec = match (kind, nums.as_slice()) {
            ("U" | "u", &[low, high]) => DistributionSpec::Uniform { low, high },
            ("N" | "n", &[mean, std]) => DistributionSpec::TruncatedNormal { mean, std },
            ("E" | "e", &[rate]) => DistributionSpec::Exponential { rate },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<DistributionSpec> for String {
    fn from(d: DistributionSpec) -> String {
        d.to_string()
    }
}

impl TryFrom<String> for DistributionSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `n` independent draws; identical for identical `(spec, n, seed)`.
pub fn sample(spec: &DistributionSpec, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return config("sample count must be positive");
    }
    let sampler = spec.sampler()?;
    let mut rng = rng_for(seed, STREAM_SAMPLE);
    Ok((0..n).map(|_| sampler.draw(&mut rng)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operation {
    #[serde(rename = "ADD")]
    Add,
    #[serde(rename = "SUB")]
    Sub,
    #[serde(rename = "MUL")]
    Mul,
    #[serde(rename = "DIV")]
    Div,
}

impl Operation {
    pub const ALL: [Operation; 4] = [Operation::Add, Operation::Sub, Operation::Mul, Operation::Div];

    pub fn tag(self) -> &'static str {
        match self {
            Operation::Add => "ADD",
            Operation::Sub => "SUB",
            Operation::Mul => "MUL",
            Operation::Div => "DIV",
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Operation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ADD" | "+" => Ok(Operation::Add),
            "SUB" | "-" => Ok(Operation::Sub),
            "MUL" | "*" => Ok(Operation::Mul),
            "DIV" | "/" => Ok(Operation::Div),
            _ => config(format!("unknown operation `{s}`")),
        }
    }
}

/// `a ⋄ b` in plain IEEE arithmetic; division by zero is not intercepted.
pub fn apply_op(a: f64, b: f64, op: Operation) -> f64 {
    match op {
        Operation::Add => a + b,
        Operation::Sub => a - b,
        Operation::Mul => a * b,
        Operation::Div => a / b,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    A,
    B,
    Ignore,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Two inputs, `a = x0`, `b = x1`.
    Minimal,
    /// Ten inputs, one relevant input per operand.
    Simple,
    /// A hundred inputs summed into disjoint operand groups.
    Function,
}

impl TaskKind {
    pub fn input_dim(self) -> usize {
        match self {
            TaskKind::Minimal => 2,
            TaskKind::Simple => 10,
            TaskKind::Function => 100,
        }
    }
}

/// Role of every input dimension; fixed for all samples of a task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment(Vec<Role>);

impl Assignment {
    pub fn new(roles: Vec<Role>) -> Result<Self> {
        if !roles.contains(&Role::A) || !roles.contains(&Role::B) {
            return config("an assignment needs at least one A and one B input");
        }
        Ok(Self(roles))
    }

    pub fn roles(&self) -> &[Role] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self, role: Role) -> Vec<usize> {
        self.0.iter().enumerate().filter(|(_, &r)| r == role).map(|(i, _)| i).collect()
    }

    /// Operand sums `(a, b)` for one input row.
    pub fn operands(&self, row: &[f64]) -> (f64, f64) {
        let (mut a, mut b) = (0.0, 0.0);
        for (&r, &v) in self.0.iter().zip(row) {
            match r {
                Role::A => a += v,
                Role::B => b += v,
                Role::Ignore => {}
            }
        }
        (a, b)
    }
}

/// Group sizes for the function task are drawn from this inclusive range.
pub const FUNCTION_GROUP_SIZE: (usize, usize) = (20, 40);

pub fn make_assignment(kind: TaskKind, seed: u64) -> Assignment {
    let n = kind.input_dim();
    let mut rng = rng_for(seed, STREAM_ASSIGNMENT);
    let roles = match kind {
        TaskKind::Minimal => vec![Role::A, Role::B],
        TaskKind::Simple => {
            let mut roles = vec![Role::Ignore; n];
            let picked = rand::seq::index::sample(&mut rng, n, 2);
            roles[picked.index(0)] = Role::A;
            roles[picked.index(1)] = Role::B;
            roles
        }
        TaskKind::Function => {
            let (lo, hi) = FUNCTION_GROUP_SIZE;
            let na = rng.random_range(lo..=hi);
            let nb = rng.random_range(lo..=hi);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut roles = vec![Role::Ignore; n];
            for &i in &order[..na] {
                roles[i] = Role::A;
            }
            for &i in &order[na..na + nb] {
                roles[i] = Role::B;
            }
            roles
        }
    };
    Assignment(roles)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub operation: Operation,
    pub kind: TaskKind,
    pub assignment: Assignment,
    pub train_dist: DistributionSpec,
    /// One or more evaluation ranges; with several, each is reported on its own
    /// and their union is the headline extrapolation set.
    pub extrap_dists: Vec<DistributionSpec>,
    pub sample_count: usize,
}

impl TaskSpec {
    pub fn new(
        operation: Operation,
        kind: TaskKind,
        seed: u64,
        train_dist: DistributionSpec,
        extrap_dists: Vec<DistributionSpec>,
    ) -> Self {
        Self {
            operation,
            kind,
            assignment: make_assignment(kind, seed),
            train_dist,
            extrap_dists,
            sample_count: DEFAULT_SAMPLE_COUNT,
        }
    }

    pub fn with_sample_count(mut self, n: usize) -> Self {
        self.sample_count = n;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.assignment.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_count == 0 {
            return config("sample count must be positive");
        }
        if self.assignment.len() != self.kind.input_dim() {
            return config(format!(
                "{:?} task needs {} inputs, assignment has {}",
                self.kind,
                self.kind.input_dim(),
                self.assignment.len()
            ));
        }
        let roles = self.assignment.roles();
        let count = |r: Role| roles.iter().filter(|&&x| x == r).count();
        let ok = match self.kind {
            TaskKind::Minimal => roles == [Role::A, Role::B],
            TaskKind::Simple => count(Role::A) == 1 && count(Role::B) == 1,
            TaskKind::Function => count(Role::A) >= 1 && count(Role::B) >= 1 && count(Role::Ignore) >= 1,
        };
        if !ok {
            return config(format!("assignment does not fit a {:?} task", self.kind));
        }
        if self.extrap_dists.is_empty() {
            return config("at least one extrapolation distribution is required");
        }
        self.train_dist.validate()?;
        self.extrap_dists.iter().try_for_each(|d| d.validate())
    }

    /// Label used in result tables, components joined with `+`.
    pub fn extrap_label(&self) -> String {
        self.extrap_dists.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("+")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// Data the model is fitted on.
    Train,
    /// Held-out draws from the training distribution.
    Interpolation,
    /// Draws from the `i`-th extrapolation distribution.
    Extrapolation(usize),
}

const STREAM_SAMPLE: u64 = 1;
const STREAM_ASSIGNMENT: u64 = 2;

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Train => 16,
            Split::Interpolation => 17,
            Split::Extrapolation(i) => 32 + i as u64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Tensor,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Delimited text: header `x0,…,x{n−1},y`, then one sample per line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (0..self.x.cols()).map(|i| format!("x{i}")).collect();
        writeln!(out, "{},y", header.join(","))?;
        for r in 0..self.len() {
            for v in self.x.row_slice(r) {
                write!(out, "{v},")?;
            }
            writeln!(out, "{}", self.y.get(r, 0))?;
        }
        Ok(())
    }

    /// Row-wise union of datasets with equal width.
    pub fn concat(parts: &[Dataset], split: Split) -> Result<Dataset> {
        let xs: Vec<&Tensor> = parts.iter().map(|d| &d.x).collect();
        let ys: Vec<&Tensor> = parts.iter().map(|d| &d.y).collect();
        Ok(Dataset { x: Tensor::vstack(&xs)?, y: Tensor::vstack(&ys)?, split })
    }
}

pub fn build_dataset(task: &TaskSpec, split: Split, seed: u64) -> Result<Dataset> {
    task.validate()?;
    let dist = match split {
        Split::Train | Split::Interpolation => task.train_dist,
        Split::Extrapolation(i) => *task
            .extrap_dists
            .get(i)
            .ok_or_else(|| Error::Config(format!("no extrapolation distribution #{i}")))?,
    };
    let sampler = dist.sampler()?;
    let mut rng = rng_for(seed, split.stream());
    let n = task.sample_count;
    let dim = task.input_dim();
    let mut x = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n);
    let mut row = vec![0.0; dim];
    for _ in 0..n {
        let mut attempts = 0;
        loop {
            row.iter_mut().for_each(|v| *v = sampler.draw(&mut rng));
            let (a, b) = task.assignment.operands(&row);
            if task.operation != Operation::Div || b.abs() >= DIV_MIN_DIVISOR {
                x.extend_from_slice(&row);
                y.push(apply_op(a, b, task.operation));
                break;
            }
            attempts += 1;
            if attempts >= MAX_RESAMPLE_ATTEMPTS {
                return config(format!(
                    "could not draw a divisor with |b| >= {DIV_MIN_DIVISOR} from {dist} in {MAX_RESAMPLE_ATTEMPTS} attempts"
                ));
            }
        }
    }
    Ok(Dataset { x: Tensor::from_parts(n, dim, x), y: Tensor::from_parts(n, 1, y), split })
}

/// Every extrapolation component of `task`, in order.
pub fn build_extrapolation(task: &TaskSpec, seed: u64) -> Result<Vec<Dataset>> {
    (0..task.extrap_dists.len()).map(|i| build_dataset(task, Split::Extrapolation(i), seed)).collect()
}
