//! Compute-graph search space: a fixed array of vertex slots over two scalar
//! inputs, wired as a DAG by construction. Node indices `0..N_INPUTS` are the
//! inputs; slot `k` is node `N_INPUTS + k`.

use std::fmt;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::task::{Task, MAX_INPUTS};
use super::{fitness_from_error, noisy_error, saturate, EditKind, EvalConfig, FitnessRecord, Problem, RewriteError};
use crate::rng::{self, SplitMix64};
use crate::ufh::{self, FunctionalHash, HashConfig, HashProbe, Phase};

pub const N_INPUTS: usize = 2;

/// Canonical hashing inputs are uniform on `[-FAKE_RANGE, FAKE_RANGE]`.
pub const FAKE_RANGE: f64 = 100.0;

const FAKE_DATA_SALT: u64 = 0xFA6E_0001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphOp {
    Add,
    Sub,
    Mul,
    Max,
    Neg,
    Relu,
    Identity,
    Const,
}

impl GraphOp {
    pub const ALL: [GraphOp; 8] = [
        GraphOp::Add,
        GraphOp::Sub,
        GraphOp::Mul,
        GraphOp::Max,
        GraphOp::Neg,
        GraphOp::Relu,
        GraphOp::Identity,
        GraphOp::Const,
    ];

    pub fn arity(self) -> usize {
        match self {
            GraphOp::Add | GraphOp::Sub | GraphOp::Mul | GraphOp::Max => 2,
            GraphOp::Neg | GraphOp::Relu | GraphOp::Identity => 1,
            GraphOp::Const => 0,
        }
    }
}

/// One slot. Unused inputs are zero; `value` is only meaningful for `Const`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VertexRepr", into = "VertexRepr")]
pub struct Vertex {
    pub op: GraphOp,
    pub inputs: [usize; 2],
    pub value: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VertexRepr {
    op: GraphOp,
    #[serde(default, skip_serializing_if = "Vec::is_empty", rename = "in")]
    inputs: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
}

impl From<Vertex> for VertexRepr {
    fn from(v: Vertex) -> Self {
        Self {
            op: v.op,
            inputs: v.inputs[..v.op.arity()].to_vec(),
            value: (v.op == GraphOp::Const).then_some(v.value),
        }
    }
}

impl TryFrom<VertexRepr> for Vertex {
    type Error = String;

    fn try_from(r: VertexRepr) -> Result<Self, String> {
        if r.inputs.len() != r.op.arity() {
            return Err(format!("{:?} takes {} inputs, got {}", r.op, r.op.arity(), r.inputs.len()));
        }
        let value = match (r.op, r.value) {
            (GraphOp::Const, Some(c)) if c.is_finite() => c,
            (GraphOp::Const, Some(_)) => return Err("const value must be finite".into()),
            (GraphOp::Const, None) => return Err("const vertex needs a value".into()),
            (_, Some(_)) => return Err(format!("{:?} takes no value", r.op)),
            (_, None) => 0.0,
        };
        let mut inputs = [0; 2];
        inputs[..r.inputs.len()].copy_from_slice(&r.inputs);
        Ok(Vertex { op: r.op, inputs, value })
    }
}

impl Vertex {
    pub fn new(op: GraphOp, inputs: &[usize]) -> Self {
        let mut v = Vertex { op, inputs: [0; 2], value: 0.0 };
        v.inputs[..inputs.len()].copy_from_slice(inputs);
        v
    }

    pub fn constant(value: f64) -> Self {
        Vertex { op: GraphOp::Const, inputs: [0; 2], value }
    }

    pub fn edges(&self) -> &[usize] {
        &self.inputs[..self.op.arity()]
    }

    /// Random vertex for node index `node` (inputs drawn from earlier nodes).
    fn random<R: Rng + ?Sized>(op: GraphOp, node: usize, rng: &mut R) -> Self {
        let mut v = Vertex { op, inputs: [0; 2], value: 0.0 };
        for i in 0..op.arity() {
            v.inputs[i] = rng.random_range(0..node);
        }
        if op == GraphOp::Const {
            v.value = rng.random_range(-1.0..1.0);
        }
        v
    }

    #[inline]
    fn apply(&self, values: &[f64]) -> f64 {
        let x = |i: usize| values[self.inputs[i]];
        saturate(match self.op {
            GraphOp::Add => x(0) + x(1),
            GraphOp::Sub => x(0) - x(1),
            GraphOp::Mul => x(0) * x(1),
            GraphOp::Max => x(0).max(x(1)),
            GraphOp::Neg => -x(0),
            GraphOp::Relu => x(0).max(0.0),
            GraphOp::Identity => x(0),
            GraphOp::Const => self.value,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct GraphCandidate {
    pub vertices: Vec<Vertex>,
    /// Node index of the output.
    pub output: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRepr {
    vertices: Vec<Vertex>,
    output: usize,
}

impl From<GraphCandidate> for GraphRepr {
    fn from(g: GraphCandidate) -> Self {
        Self { vertices: g.vertices, output: g.output }
    }
}

impl TryFrom<GraphRepr> for GraphCandidate {
    type Error = String;

    fn try_from(r: GraphRepr) -> Result<Self, String> {
        let g = GraphCandidate { vertices: r.vertices, output: r.output };
        g.check().map(|()| g)
    }
}

impl GraphCandidate {
    pub fn n_nodes(&self) -> usize {
        N_INPUTS + self.vertices.len()
    }

    /// Edges point strictly backwards and the output is a node.
    pub fn check(&self) -> Result<(), String> {
        for (k, v) in self.vertices.iter().enumerate() {
            let node = N_INPUTS + k;
            if let Some(&bad) = v.edges().iter().find(|&&e| e >= node) {
                return Err(format!("vertex {k} (node {node}) reads node {bad}, which is not earlier"));
            }
        }
        if self.output >= self.n_nodes() {
            return Err(format!("output node {} out of range (graph has {} nodes)", self.output, self.n_nodes()));
        }
        Ok(())
    }

    /// Value of every node on `inputs`.
    pub fn node_values(&self, inputs: [f64; N_INPUTS], values: &mut Vec<f64>) {
        values.clear();
        values.extend(inputs.map(saturate));
        for v in &self.vertices {
            let y = v.apply(values);
            values.push(y);
        }
    }

    pub fn output_for(&self, inputs: [f64; N_INPUTS]) -> f64 {
        let mut values = Vec::with_capacity(self.n_nodes());
        self.node_values(inputs, &mut values);
        values[self.output]
    }

    /// Nodes on some path to the output.
    pub fn reachable(&self) -> Vec<bool> {
        let mut live = vec![false; self.n_nodes()];
        live[self.output] = true;
        for k in (0..self.vertices.len()).rev() {
            if live[N_INPUTS + k] {
                for &e in self.vertices[k].edges() {
                    live[e] = true;
                }
            }
        }
        live
    }
}

impl fmt::Display for GraphCandidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let live = self.reachable();
        for (k, v) in self.vertices.iter().enumerate() {
            let node = N_INPUTS + k;
            let mark = if live[node] { ' ' } else { '.' };
            write!(f, "{mark}n{node} = {:?}", v.op)?;
            match v.op {
                GraphOp::Const => writeln!(f, "({})", v.value)?,
                _ => {
                    let args: Vec<String> = v.edges().iter().map(|e| format!("n{e}")).collect();
                    writeln!(f, "({})", args.join(", "))?;
                }
            }
        }
        writeln!(f, " output = n{}", self.output)
    }
}

/// Bounds of the graph space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphSpace {
    pub max_vertices: usize,
}

impl Default for GraphSpace {
    fn default() -> Self {
        Self { max_vertices: 20 }
    }
}

impl GraphSpace {
    pub fn validate(&self, g: &GraphCandidate) -> Result<(), String> {
        if g.vertices.len() != self.max_vertices {
            return Err(format!("graph has {} vertex slots, space has {}", g.vertices.len(), self.max_vertices));
        }
        g.check()
    }

    pub fn random_candidate<R: Rng + ?Sized>(&self, rng: &mut R) -> GraphCandidate {
        let vertices = (0..self.max_vertices)
            .map(|k| Vertex::random(*GraphOp::ALL.choose(rng).expect("non-empty"), N_INPUTS + k, rng))
            .collect();
        let output = rng.random_range(0..N_INPUTS + self.max_vertices);
        GraphCandidate { vertices, output }
    }

    pub fn applicable_edits(&self, g: &GraphCandidate) -> Vec<EditKind> {
        let mut kinds = vec![EditKind::Insert];
        if g.vertices.iter().any(|v| v.op != GraphOp::Identity) {
            kinds.push(EditKind::Delete);
        }
        if !g.vertices.is_empty() {
            kinds.push(EditKind::Modify);
        }
        kinds
    }

    /// One atomic edit: rewire one edge or the output (`Insert`), reset a
    /// vertex to identity (`Delete`), or change one vertex's opcode or
    /// constant (`Modify`).
    pub fn mutate_with_kind<R: Rng + ?Sized>(&self, parent: &GraphCandidate, rng: &mut R) -> (GraphCandidate, Option<EditKind>) {
        let kinds = self.applicable_edits(parent);
        let kind = *kinds.choose(rng).expect("rewiring always applies");
        let mut child = parent.clone();
        match kind {
            EditKind::Insert => {
                // Edge slots, plus one for the output.
                let edges: Vec<(usize, usize)> = parent
                    .vertices
                    .iter()
                    .enumerate()
                    .flat_map(|(k, v)| (0..v.op.arity()).map(move |i| (k, i)))
                    .collect();
                let pick = rng.random_range(0..=edges.len());
                if pick == edges.len() {
                    child.output = different(parent.n_nodes(), parent.output, rng);
                } else {
                    let (k, i) = edges[pick];
                    let v = &mut child.vertices[k];
                    v.inputs[i] = different(N_INPUTS + k, v.inputs[i], rng);
                }
            }
            EditKind::Delete => {
                let candidates: Vec<usize> = (0..parent.vertices.len()).filter(|&k| parent.vertices[k].op != GraphOp::Identity).collect();
                let k = *candidates.choose(rng).expect("delete is applicable");
                let old = parent.vertices[k];
                let src = if old.op.arity() > 0 { old.inputs[0] } else { rng.random_range(0..N_INPUTS + k) };
                child.vertices[k] = Vertex::new(GraphOp::Identity, &[src]);
            }
            EditKind::Modify => {
                let k = rng.random_range(0..parent.vertices.len());
                let old = parent.vertices[k];
                let v = &mut child.vertices[k];
                if old.op == GraphOp::Const && rng.random_bool(0.5) {
                    if rng.random_bool(0.5) {
                        v.value *= rng.random_range(0.5..1.5);
                    } else {
                        v.value = rng.random_range(-1.0..1.0);
                    }
                } else {
                    let others: Vec<GraphOp> = GraphOp::ALL.into_iter().filter(|&op| op != old.op).collect();
                    let op = *others.choose(rng).expect("several opcodes");
                    let mut fresh = Vertex::random(op, N_INPUTS + k, rng);
                    // Keep existing wiring where the arities overlap.
                    let keep = op.arity().min(old.op.arity());
                    fresh.inputs[..keep].copy_from_slice(&old.inputs[..keep]);
                    *v = fresh;
                }
            }
        }
        (child, Some(kind))
    }

    pub fn mutate<R: Rng + ?Sized>(&self, parent: &GraphCandidate, rng: &mut R) -> GraphCandidate {
        self.mutate_with_kind(parent, rng).0
    }

    /// Structurally different, functionally identical graph: an unreachable
    /// slot is either overwritten with another vertex, or turned into
    /// `identity(v)` for an earlier node `v` with later readers of `v`
    /// redirected through it.
    pub fn equivalent_rewrite<R: Rng + ?Sized>(&self, g: &GraphCandidate, rng: &mut R) -> Result<GraphCandidate, RewriteError> {
        let live = g.reachable();
        let dead: Vec<usize> = (0..g.vertices.len()).filter(|&k| !live[N_INPUTS + k]).collect();
        if dead.is_empty() {
            return Err(RewriteError::NoCapacity);
        }
        for _ in 0..64 {
            let k = *dead.choose(rng).expect("non-empty");
            let node = N_INPUTS + k;
            let mut out = g.clone();
            if rng.random_bool(0.5) {
                let op = *GraphOp::ALL.choose(rng).expect("non-empty");
                out.vertices[k] = Vertex::random(op, node, rng);
            } else {
                let src = rng.random_range(0..node);
                out.vertices[k] = Vertex::new(GraphOp::Identity, &[src]);
                for v in &mut out.vertices[k + 1..] {
                    let arity = v.op.arity();
                    for e in &mut v.inputs[..arity] {
                        if *e == src {
                            *e = node;
                        }
                    }
                }
                if out.output == src {
                    out.output = node;
                }
            }
            if out != *g {
                return Ok(out);
            }
        }
        Err(RewriteError::NoCapacity)
    }
}

fn different<R: Rng + ?Sized>(n: usize, current: usize, rng: &mut R) -> usize {
    if n <= 1 {
        return current;
    }
    let pick = rng.random_range(0..n - 1);
    if pick >= current {
        pick + 1
    } else {
        pick
    }
}

fn graph_inputs(x: &[f64; MAX_INPUTS]) -> [f64; N_INPUTS] {
    [x[0], x[1]]
}

/// Fake hashing inputs: the first `n` draws form the train phase, the next
/// `n` the validation phase.
pub fn canonical_inputs(phase: Phase, n: usize, fixed_seed: u64) -> Vec<[f64; N_INPUTS]> {
    let mut rng = rng::seeded(fixed_seed, FAKE_DATA_SALT);
    let mut draw = || -> [f64; N_INPUTS] { std::array::from_fn(|_| rng.random_range(-FAKE_RANGE..=FAKE_RANGE)) };
    let skip = match phase {
        Phase::Train => 0,
        Phase::Validation => n,
    };
    for _ in 0..skip {
        draw();
    }
    (0..n).map(|_| draw()).collect()
}

pub fn hashable_outputs(g: &GraphCandidate, phase: Phase, index: usize, config: &HashConfig) -> Vec<f64> {
    let inputs = canonical_inputs(phase, index + 1, config.fixed_seed)[index];
    vec![g.output_for(inputs)]
}

pub struct GraphProbe<'a> {
    pub graph: &'a GraphCandidate,
}

impl HashProbe for GraphProbe<'_> {
    type Example = [f64; N_INPUTS];
    type State = Vec<f64>;

    fn canonical_examples(&self, phase: Phase, n: usize, fixed_seed: u64) -> Vec<[f64; N_INPUTS]> {
        canonical_inputs(phase, n, fixed_seed)
    }

    fn initialize(&self, _rng: &mut SplitMix64) -> Vec<f64> {
        Vec::with_capacity(self.graph.n_nodes())
    }

    fn forward(&self, values: &mut Vec<f64>, x: &[f64; N_INPUTS], _rng: &mut SplitMix64, outputs: &mut Vec<f64>) {
        self.graph.node_values(*x, values);
        outputs.push(values[self.graph.output]);
    }

    fn backward(&self, _values: &mut Vec<f64>, _x: &[f64; N_INPUTS], _rng: &mut SplitMix64) {}
}

pub fn functional_hash(g: &GraphCandidate, config: &HashConfig) -> FunctionalHash {
    ufh::unified_functional_hash(&GraphProbe { graph: g }, config)
}

/// Validation RMS error against the task target.
pub fn validation_rms(g: &GraphCandidate, task: &Task) -> f64 {
    let mut values = Vec::with_capacity(g.n_nodes());
    let sum_sq: f64 = task
        .validation
        .iter()
        .map(|ex| {
            g.node_values(graph_inputs(&ex.inputs), &mut values);
            let err = ex.label - values[g.output];
            err * err
        })
        .sum();
    (sum_sq / task.validation.len().max(1) as f64).sqrt()
}

/// Graph space bound to a task and evaluation settings. Graphs have no
/// trainable state, so only the validation split is scored.
#[derive(Clone, Debug)]
pub struct GraphProblem {
    pub space: GraphSpace,
    pub task: Task,
    pub eval: EvalConfig,
}

impl GraphProblem {
    pub fn new(space: GraphSpace, task: super::TaskSpec, eval: EvalConfig) -> Self {
        let task = Task::new(task, N_INPUTS, eval.train_examples, eval.validation_examples);
        Self { space, task, eval }
    }
}

impl Problem for GraphProblem {
    type Candidate = GraphCandidate;

    fn random_candidate<R: Rng + ?Sized>(&self, rng: &mut R) -> GraphCandidate {
        self.space.random_candidate(rng)
    }

    fn mutate<R: Rng + ?Sized>(&self, parent: &GraphCandidate, rng: &mut R) -> GraphCandidate {
        self.space.mutate(parent, rng)
    }

    fn evaluate<R: Rng + ?Sized>(&self, g: &GraphCandidate, noise: &mut R) -> FitnessRecord {
        let err = noisy_error(validation_rms(g, &self.task), self.eval.noise_sigma, noise);
        FitnessRecord::single(fitness_from_error(err), self.eval.eval_cost())
    }

    fn functional_hash(&self, g: &GraphCandidate, config: &HashConfig) -> FunctionalHash {
        functional_hash(g, config)
    }

    fn structural_key(&self, g: &GraphCandidate) -> u64 {
        super::structural_key(g)
    }

    fn true_fitness(&self, g: &GraphCandidate) -> f64 {
        fitness_from_error(validation_rms(g, &self.task))
    }

    fn unseen_fitness(&self, g: &GraphCandidate, data_seed: u64) -> f64 {
        fitness_from_error(validation_rms(g, &self.task.with_data_seed(data_seed)))
    }
}
