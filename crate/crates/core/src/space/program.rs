//! Program search space: three instruction lists (initialize, forward,
//! backward) over a small typed virtual memory, in the style of
//! AutoML-Zero.
//!
//! Memory conventions:
//! - `v0` holds the features, written before every forward pass;
//! - `s1` is the prediction, zeroed before every forward pass and read after it;
//! - `s0` receives the label before every backward pass.
//!
//! Every written value is clamped to `±SATURATION`, so evaluation is total.

use std::collections::HashSet;
use std::fmt;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::task::{Example, Task, MAX_INPUTS};
use super::{fitness_from_error, noisy_error, saturate, EditKind, EvalConfig, FitnessRecord, Problem, RewriteError};
use crate::rng::{self, SplitMix64};
use crate::ufh::{self, FunctionalHash, HashConfig, HashProbe, Phase};

pub const SCALARS: usize = 8;
pub const VECTORS: usize = 8;
pub const MATRICES: usize = 2;
pub const DIM: usize = 4;

pub const LABEL: usize = 0;
pub const PREDICTION: usize = 1;
pub const FEATURES: usize = 0;

const EVAL_INIT_SALT: u64 = 0xE7A1_0001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Bank {
    Scalar,
    Vector,
    Matrix,
}

impl Bank {
    pub fn size(self) -> usize {
        match self {
            Bank::Scalar => SCALARS,
            Bank::Vector => VECTORS,
            Bank::Matrix => MATRICES,
        }
    }
}

use Bank::{Matrix as M, Scalar as S, Vector as V};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Opcode {
    ScalarConst,
    ScalarAdd,
    ScalarSub,
    ScalarMul,
    ScalarDiv,
    VectorAdd,
    VectorSub,
    ScalarVectorMul,
    Dot,
    MatVec,
    Outer,
    MatrixAdd,
    Maximum,
    Heaviside,
    ScalarGaussian,
    VectorGaussian,
    MatrixGaussian,
}

impl Opcode {
    pub const ALL: [Opcode; 17] = [
        Opcode::ScalarConst,
        Opcode::ScalarAdd,
        Opcode::ScalarSub,
        Opcode::ScalarMul,
        Opcode::ScalarDiv,
        Opcode::VectorAdd,
        Opcode::VectorSub,
        Opcode::ScalarVectorMul,
        Opcode::Dot,
        Opcode::MatVec,
        Opcode::Outer,
        Opcode::MatrixAdd,
        Opcode::Maximum,
        Opcode::Heaviside,
        Opcode::ScalarGaussian,
        Opcode::VectorGaussian,
        Opcode::MatrixGaussian,
    ];

    /// Deterministic opcodes, usable anywhere.
    pub const DETERMINISTIC: [Opcode; 14] = [
        Opcode::ScalarConst,
        Opcode::ScalarAdd,
        Opcode::ScalarSub,
        Opcode::ScalarMul,
        Opcode::ScalarDiv,
        Opcode::VectorAdd,
        Opcode::VectorSub,
        Opcode::ScalarVectorMul,
        Opcode::Dot,
        Opcode::MatVec,
        Opcode::Outer,
        Opcode::MatrixAdd,
        Opcode::Maximum,
        Opcode::Heaviside,
    ];

    pub fn input_banks(self) -> &'static [Bank] {
        match self {
            Opcode::ScalarConst | Opcode::ScalarGaussian | Opcode::VectorGaussian | Opcode::MatrixGaussian => &[],
            Opcode::ScalarAdd | Opcode::ScalarSub | Opcode::ScalarMul | Opcode::ScalarDiv => &[S, S],
            Opcode::VectorAdd | Opcode::VectorSub | Opcode::Dot | Opcode::Outer | Opcode::Maximum => &[V, V],
            Opcode::ScalarVectorMul => &[S, V],
            Opcode::MatVec => &[M, V],
            Opcode::MatrixAdd => &[M, M],
            Opcode::Heaviside => &[V],
        }
    }

    pub fn output_bank(self) -> Bank {
        match self {
            Opcode::ScalarConst
            | Opcode::ScalarAdd
            | Opcode::ScalarSub
            | Opcode::ScalarMul
            | Opcode::ScalarDiv
            | Opcode::Dot
            | Opcode::ScalarGaussian => S,
            Opcode::VectorAdd
            | Opcode::VectorSub
            | Opcode::ScalarVectorMul
            | Opcode::MatVec
            | Opcode::Maximum
            | Opcode::Heaviside
            | Opcode::VectorGaussian => V,
            Opcode::Outer | Opcode::MatrixAdd | Opcode::MatrixGaussian => M,
        }
    }

    /// Literal constants: the value for `ScalarConst`, mean and standard
    /// deviation for the Gaussian initialisers.
    pub fn n_consts(self) -> usize {
        match self {
            Opcode::ScalarConst => 1,
            Opcode::ScalarGaussian | Opcode::VectorGaussian | Opcode::MatrixGaussian => 2,
            _ => 0,
        }
    }

    pub fn is_random(self) -> bool {
        matches!(self, Opcode::ScalarGaussian | Opcode::VectorGaussian | Opcode::MatrixGaussian)
    }
}

/// One instruction. Unused operand and constant slots are zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstructionRepr", into = "InstructionRepr")]
pub struct Instruction {
    pub op: Opcode,
    pub inputs: [usize; 2],
    pub out: usize,
    pub consts: [f64; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstructionRepr {
    op: Opcode,
    #[serde(default, skip_serializing_if = "Vec::is_empty", rename = "in")]
    inputs: Vec<usize>,
    out: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    consts: Vec<f64>,
}

impl From<Instruction> for InstructionRepr {
    fn from(ins: Instruction) -> Self {
        Self {
            op: ins.op,
            inputs: ins.inputs[..ins.op.input_banks().len()].to_vec(),
            out: ins.out,
            consts: ins.consts[..ins.op.n_consts()].to_vec(),
        }
    }
}

impl TryFrom<InstructionRepr> for Instruction {
    type Error = String;

    fn try_from(r: InstructionRepr) -> Result<Self, String> {
        let banks = r.op.input_banks();
        if r.inputs.len() != banks.len() {
            return Err(format!("{:?} takes {} inputs, got {}", r.op, banks.len(), r.inputs.len()));
        }
        if r.consts.len() != r.op.n_consts() {
            return Err(format!("{:?} takes {} constants, got {}", r.op, r.op.n_consts(), r.consts.len()));
        }
        let mut ins = Instruction { op: r.op, inputs: [0; 2], out: r.out, consts: [0.0; 2] };
        ins.inputs[..banks.len()].copy_from_slice(&r.inputs);
        ins.consts[..r.consts.len()].copy_from_slice(&r.consts);
        ins.check().map(|()| ins)
    }
}

impl Instruction {
    pub fn new(op: Opcode, inputs: &[usize], out: usize, consts: &[f64]) -> Self {
        let mut ins = Instruction { op, inputs: [0; 2], out, consts: [0.0; 2] };
        ins.inputs[..inputs.len()].copy_from_slice(inputs);
        ins.consts[..consts.len()].copy_from_slice(consts);
        debug_assert!(ins.check().is_ok(), "{:?}", ins.check());
        ins
    }

    /// Addresses and constants in range for their banks.
    pub fn check(&self) -> Result<(), String> {
        for (i, (&bank, &addr)) in self.op.input_banks().iter().zip(&self.inputs).enumerate() {
            if addr >= bank.size() {
                return Err(format!("{:?} input {i} address {addr} out of range for {bank:?}", self.op));
            }
        }
        let out_bank = self.op.output_bank();
        if self.out >= out_bank.size() {
            return Err(format!("{:?} output address {} out of range for {out_bank:?}", self.op, self.out));
        }
        if self.consts[..self.op.n_consts()].iter().any(|c| !c.is_finite()) {
            return Err(format!("{:?} has a non-finite constant", self.op));
        }
        Ok(())
    }

    pub fn reads(&self) -> impl Iterator<Item = (Bank, usize)> + '_ {
        self.op.input_banks().iter().copied().zip(self.inputs.iter().copied())
    }

    pub fn write(&self) -> (Bank, usize) {
        (self.op.output_bank(), self.out)
    }

    fn random<R: Rng + ?Sized>(op: Opcode, rng: &mut R) -> Self {
        let mut ins = Instruction { op, inputs: [0; 2], out: rng.random_range(0..op.output_bank().size()), consts: [0.0; 2] };
        for (slot, bank) in ins.inputs.iter_mut().zip(op.input_banks()) {
            *slot = rng.random_range(0..bank.size());
        }
        match op {
            Opcode::ScalarConst => ins.consts[0] = rng.random_range(-1.0..1.0),
            _ if op.is_random() => {
                ins.consts[0] = rng.random_range(-1.0..1.0);
                ins.consts[1] = rng.random_range(0.0..1.0);
            }
            _ => {}
        }
        ins
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |(bank, addr): (Bank, usize)| {
            let p = match bank {
                S => 's',
                V => 'v',
                M => 'm',
            };
            format!("{p}{addr}")
        };
        let out = name(self.write());
        let ins: Vec<String> = self.reads().map(name).collect();
        let [c0, c1] = self.consts;
        match self.op {
            Opcode::ScalarConst => write!(f, "{out} = {c0}"),
            Opcode::ScalarAdd | Opcode::VectorAdd | Opcode::MatrixAdd => write!(f, "{out} = {} + {}", ins[0], ins[1]),
            Opcode::ScalarSub | Opcode::VectorSub => write!(f, "{out} = {} - {}", ins[0], ins[1]),
            Opcode::ScalarMul | Opcode::ScalarVectorMul => write!(f, "{out} = {} * {}", ins[0], ins[1]),
            Opcode::ScalarDiv => write!(f, "{out} = {} / {}", ins[0], ins[1]),
            Opcode::Dot | Opcode::MatVec => write!(f, "{out} = dot({}, {})", ins[0], ins[1]),
            Opcode::Outer => write!(f, "{out} = outer({}, {})", ins[0], ins[1]),
            Opcode::Maximum => write!(f, "{out} = maximum({}, {})", ins[0], ins[1]),
            Opcode::Heaviside => write!(f, "{out} = heaviside({})", ins[0]),
            Opcode::ScalarGaussian | Opcode::VectorGaussian | Opcode::MatrixGaussian => {
                write!(f, "{out} = gaussian({c0}, {c1})")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Function {
    Initialize,
    Forward,
    Backward,
}

impl Function {
    pub const ALL: [Function; 3] = [Function::Initialize, Function::Forward, Function::Backward];
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramCandidate {
    #[serde(default)]
    pub initialize: Vec<Instruction>,
    #[serde(default)]
    pub forward: Vec<Instruction>,
    #[serde(default)]
    pub backward: Vec<Instruction>,
}

impl ProgramCandidate {
    pub fn function(&self, f: Function) -> &Vec<Instruction> {
        match f {
            Function::Initialize => &self.initialize,
            Function::Forward => &self.forward,
            Function::Backward => &self.backward,
        }
    }

    pub fn function_mut(&mut self, f: Function) -> &mut Vec<Instruction> {
        match f {
            Function::Initialize => &mut self.initialize,
            Function::Forward => &mut self.forward,
            Function::Backward => &mut self.backward,
        }
    }

    pub fn len(&self) -> usize {
        self.initialize.len() + self.forward.len() + self.backward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn instructions(&self) -> impl Iterator<Item = &Instruction> {
        self.initialize.iter().chain(&self.forward).chain(&self.backward)
    }
}

impl fmt::Display for ProgramCandidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, body) in [("InitializePass", &self.initialize), ("ForwardPass", &self.forward), ("BackwardPass", &self.backward)] {
            writeln!(f, "def {name}():")?;
            for ins in body {
                writeln!(f, "  {ins}")?;
            }
        }
        Ok(())
    }
}

/// Affine regression by SGD with learning rate `lr`: bias in `s4`, weights in
/// `v1`.
pub fn affine_sgd_program(lr: f64) -> ProgramCandidate {
    use Opcode::*;
    ProgramCandidate {
        initialize: vec![Instruction::new(ScalarConst, &[], 2, &[lr])],
        forward: vec![
            Instruction::new(ScalarAdd, &[1, 4], 1, &[]),
            Instruction::new(Dot, &[1, 0], 5, &[]),
            Instruction::new(ScalarAdd, &[1, 5], 1, &[]),
        ],
        backward: vec![
            Instruction::new(ScalarSub, &[0, 1], 3, &[]),
            Instruction::new(ScalarMul, &[2, 3], 3, &[]),
            Instruction::new(ScalarAdd, &[4, 3], 4, &[]),
            Instruction::new(ScalarVectorMul, &[3, 0], 2, &[]),
            Instruction::new(VectorAdd, &[1, 2], 1, &[]),
        ],
    }
}

/// [`affine_sgd_program`] padded with ineffective instructions: three writes to
/// `v2` that are overwritten before being read, a duplicated overwrite, and a
/// commuted addition.
pub fn affine_sgd_program_padded(lr: f64) -> ProgramCandidate {
    use Opcode::*;
    let mut program = affine_sgd_program(lr);
    program.backward = vec![
        Instruction::new(ScalarSub, &[0, 1], 3, &[]),
        Instruction::new(ScalarVectorMul, &[2, 1], 2, &[]),
        Instruction::new(ScalarVectorMul, &[4, 1], 2, &[]),
        Instruction::new(ScalarVectorMul, &[4, 0], 2, &[]),
        Instruction::new(ScalarMul, &[2, 3], 3, &[]),
        Instruction::new(ScalarAdd, &[3, 4], 4, &[]),
        Instruction::new(ScalarVectorMul, &[3, 0], 2, &[]),
        Instruction::new(ScalarVectorMul, &[3, 0], 2, &[]),
        Instruction::new(VectorAdd, &[1, 2], 1, &[]),
    ];
    program
}

/// Virtual memory of one program run.
#[derive(Clone, Debug, PartialEq)]
pub struct Memory {
    pub s: [f64; SCALARS],
    pub v: [[f64; DIM]; VECTORS],
    pub m: [[[f64; DIM]; DIM]; MATRICES],
}

impl Default for Memory {
    fn default() -> Self {
        Self { s: [0.0; SCALARS], v: [[0.0; DIM]; VECTORS], m: [[[0.0; DIM]; DIM]; MATRICES] }
    }
}

#[inline]
fn gaussian<R: Rng + ?Sized>(rng: &mut R, mean: f64, std: f64) -> f64 {
    let g: f64 = rng.sample(StandardNormal);
    saturate(mean + std * g)
}

fn saturating_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            0.0
        } else {
            super::SATURATION.copysign(a)
        }
    } else {
        saturate(a / b)
    }
}

impl Memory {
    #[inline]
    fn execute<R: Rng + ?Sized>(&mut self, ins: &Instruction, rng: &mut R) {
        let [a, b] = ins.inputs;
        let o = ins.out;
        match ins.op {
            Opcode::ScalarConst => self.s[o] = saturate(ins.consts[0]),
            Opcode::ScalarAdd => self.s[o] = saturate(self.s[a] + self.s[b]),
            Opcode::ScalarSub => self.s[o] = saturate(self.s[a] - self.s[b]),
            Opcode::ScalarMul => self.s[o] = saturate(self.s[a] * self.s[b]),
            Opcode::ScalarDiv => self.s[o] = saturating_div(self.s[a], self.s[b]),
            Opcode::VectorAdd => {
                let (x, y) = (self.v[a], self.v[b]);
                self.v[o] = std::array::from_fn(|i| saturate(x[i] + y[i]));
            }
            Opcode::VectorSub => {
                let (x, y) = (self.v[a], self.v[b]);
                self.v[o] = std::array::from_fn(|i| saturate(x[i] - y[i]));
            }
            Opcode::ScalarVectorMul => {
                let (s, x) = (self.s[a], self.v[b]);
                self.v[o] = std::array::from_fn(|i| saturate(s * x[i]));
            }
            Opcode::Dot => {
                let (x, y) = (&self.v[a], &self.v[b]);
                self.s[o] = saturate(x.iter().zip(y).map(|(p, q)| p * q).sum());
            }
            Opcode::MatVec => {
                let (mat, x) = (self.m[a], self.v[b]);
                self.v[o] = std::array::from_fn(|r| saturate(mat[r].iter().zip(&x).map(|(p, q)| p * q).sum()));
            }
            Opcode::Outer => {
                let (x, y) = (self.v[a], self.v[b]);
                self.m[o] = std::array::from_fn(|r| std::array::from_fn(|c| saturate(x[r] * y[c])));
            }
            Opcode::MatrixAdd => {
                let (x, y) = (self.m[a], self.m[b]);
                self.m[o] = std::array::from_fn(|r| std::array::from_fn(|c| saturate(x[r][c] + y[r][c])));
            }
            Opcode::Maximum => {
                let (x, y) = (self.v[a], self.v[b]);
                self.v[o] = std::array::from_fn(|i| x[i].max(y[i]));
            }
            Opcode::Heaviside => {
                let x = self.v[a];
                self.v[o] = std::array::from_fn(|i| if x[i] >= 0.0 { 1.0 } else { 0.0 });
            }
            Opcode::ScalarGaussian => self.s[o] = gaussian(rng, ins.consts[0], ins.consts[1]),
            Opcode::VectorGaussian => {
                for x in &mut self.v[o] {
                    *x = gaussian(rng, ins.consts[0], ins.consts[1]);
                }
            }
            Opcode::MatrixGaussian => {
                for row in &mut self.m[o] {
                    for x in row {
                        *x = gaussian(rng, ins.consts[0], ins.consts[1]);
                    }
                }
            }
        }
    }

    pub fn run<R: Rng + ?Sized>(&mut self, body: &[Instruction], rng: &mut R) {
        for ins in body {
            self.execute(ins, rng);
        }
    }

    fn load_features(&mut self, ex: &Example) {
        self.v[FEATURES] = [0.0; DIM];
        let n = DIM.min(MAX_INPUTS);
        self.v[FEATURES][..n].copy_from_slice(&ex.inputs[..n]);
        self.s[PREDICTION] = 0.0;
    }
}

/// Runs the forward pass on `ex` and returns the prediction error.
#[inline]
fn forward_error<R: Rng + ?Sized>(program: &ProgramCandidate, mem: &mut Memory, ex: &Example, rng: &mut R) -> f64 {
    mem.load_features(ex);
    mem.run(&program.forward, rng);
    ex.label - mem.s[PREDICTION]
}

#[inline]
fn backward<R: Rng + ?Sized>(program: &ProgramCandidate, mem: &mut Memory, ex: &Example, rng: &mut R) {
    mem.s[LABEL] = ex.label;
    mem.run(&program.backward, rng);
}

/// Bounds of the program space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProgramSpace {
    pub max_initialize: usize,
    pub max_forward: usize,
    pub max_backward: usize,
}

impl Default for ProgramSpace {
    fn default() -> Self {
        Self { max_initialize: 4, max_forward: 6, max_backward: 8 }
    }
}

impl ProgramSpace {
    pub fn max_len(&self, f: Function) -> usize {
        match f {
            Function::Initialize => self.max_initialize,
            Function::Forward => self.max_forward,
            Function::Backward => self.max_backward,
        }
    }

    /// Gaussian initialisers are only allowed in the initialize function.
    pub fn opcodes(&self, f: Function) -> &'static [Opcode] {
        match f {
            Function::Initialize => &Opcode::ALL,
            _ => &Opcode::DETERMINISTIC,
        }
    }

    pub fn validate(&self, program: &ProgramCandidate) -> Result<(), String> {
        for f in Function::ALL {
            let body = program.function(f);
            if body.len() > self.max_len(f) {
                return Err(format!("{f:?} has {} instructions, limit is {}", body.len(), self.max_len(f)));
            }
            for (i, ins) in body.iter().enumerate() {
                ins.check().map_err(|e| format!("{f:?}[{i}]: {e}"))?;
                if !self.opcodes(f).contains(&ins.op) {
                    return Err(format!("{f:?}[{i}]: {:?} not allowed here", ins.op));
                }
            }
        }
        Ok(())
    }

    fn random_instruction<R: Rng + ?Sized>(&self, f: Function, rng: &mut R) -> Instruction {
        let op = *self.opcodes(f).choose(rng).expect("non-empty opcode set");
        Instruction::random(op, rng)
    }

    pub fn random_candidate<R: Rng + ?Sized>(&self, rng: &mut R) -> ProgramCandidate {
        let mut program = ProgramCandidate::default();
        for f in Function::ALL {
            let len = rng.random_range(0..=self.max_len(f));
            let body = (0..len).map(|_| self.random_instruction(f, rng)).collect();
            *program.function_mut(f) = body;
        }
        program
    }

    /// Edit kinds applicable to `program`.
    pub fn applicable_edits(&self, program: &ProgramCandidate) -> Vec<EditKind> {
        let mut kinds = Vec::with_capacity(3);
        if Function::ALL.iter().any(|&f| program.function(f).len() < self.max_len(f)) {
            kinds.push(EditKind::Insert);
        }
        if !program.is_empty() {
            kinds.push(EditKind::Delete);
            kinds.push(EditKind::Modify);
        }
        kinds
    }

    /// Applies one atomic edit, chosen uniformly among the applicable kinds.
    /// A program that admits no edit at all is returned unchanged.
    pub fn mutate_with_kind<R: Rng + ?Sized>(&self, parent: &ProgramCandidate, rng: &mut R) -> (ProgramCandidate, Option<EditKind>) {
        let kinds = self.applicable_edits(parent);
        let Some(&kind) = kinds.choose(rng) else {
            return (parent.clone(), None);
        };
        let mut child = parent.clone();
        match kind {
            EditKind::Insert => {
                let open: Vec<Function> = Function::ALL.into_iter().filter(|&f| parent.function(f).len() < self.max_len(f)).collect();
                let f = *open.choose(rng).expect("insert is applicable");
                let pos = rng.random_range(0..=child.function(f).len());
                let ins = self.random_instruction(f, rng);
                child.function_mut(f).insert(pos, ins);
            }
            EditKind::Delete => {
                let f = self.random_nonempty(parent, rng);
                let body = child.function_mut(f);
                let pos = rng.random_range(0..body.len());
                body.remove(pos);
            }
            EditKind::Modify => {
                let f = self.random_nonempty(parent, rng);
                let pos = rng.random_range(0..child.function(f).len());
                let modified = self.modify_instruction(f, &child.function(f)[pos], rng);
                child.function_mut(f)[pos] = modified;
            }
        }
        (child, Some(kind))
    }

    pub fn mutate<R: Rng + ?Sized>(&self, parent: &ProgramCandidate, rng: &mut R) -> ProgramCandidate {
        self.mutate_with_kind(parent, rng).0
    }

    fn random_nonempty<R: Rng + ?Sized>(&self, program: &ProgramCandidate, rng: &mut R) -> Function {
        let filled: Vec<Function> = Function::ALL.into_iter().filter(|&f| !program.function(f).is_empty()).collect();
        *filled.choose(rng).expect("program is not empty")
    }

    /// Changes exactly one field: the opcode (re-drawing the instruction), one
    /// input address, the output address, or one constant.
    fn modify_instruction<R: Rng + ?Sized>(&self, f: Function, ins: &Instruction, rng: &mut R) -> Instruction {
        let n_inputs = ins.op.input_banks().len();
        let n_consts = ins.op.n_consts();
        let field = rng.random_range(0..2 + n_inputs + n_consts);
        let mut out = *ins;
        if field == 0 {
            let others: Vec<Opcode> = self.opcodes(f).iter().copied().filter(|&op| op != ins.op).collect();
            let op = *others.choose(rng).expect("more than one opcode");
            out = Instruction::random(op, rng);
        } else if field == 1 {
            out.out = different_address(ins.op.output_bank(), ins.out, rng);
        } else if field < 2 + n_inputs {
            let i = field - 2;
            out.inputs[i] = different_address(ins.op.input_banks()[i], ins.inputs[i], rng);
        } else {
            let i = field - 2 - n_inputs;
            let c = &mut out.consts[i];
            if rng.random_bool(0.5) {
                *c *= rng.random_range(0.5..1.5);
            } else if ins.op.is_random() && i == 1 {
                *c = rng.random_range(0.0..1.0);
            } else {
                *c = rng.random_range(-1.0..1.0);
            }
        }
        out
    }

    /// Inserts an instruction whose result is never observed: its output is
    /// either never read anywhere (and is not the prediction), or overwritten
    /// later in the same function before any read.
    pub fn equivalent_rewrite<R: Rng + ?Sized>(&self, program: &ProgramCandidate, rng: &mut R) -> Result<ProgramCandidate, RewriteError> {
        let open: Vec<Function> = Function::ALL.into_iter().filter(|&f| program.function(f).len() < self.max_len(f)).collect();
        if open.is_empty() {
            return Err(RewriteError::NoCapacity);
        }
        let read_anywhere: HashSet<(Bank, usize)> = program.instructions().flat_map(|ins| ins.reads()).collect();
        for _ in 0..256 {
            let f = *open.choose(rng).expect("non-empty");
            let body = program.function(f);
            let pos = rng.random_range(0..=body.len());
            let op = *Opcode::DETERMINISTIC.choose(rng).expect("non-empty");
            let bank = op.output_bank();
            let dead: Vec<usize> = (0..bank.size())
                .filter(|&addr| {
                    let never_read = !read_anywhere.contains(&(bank, addr)) && (bank, addr) != (S, PREDICTION);
                    never_read || overwritten_before_read(&body[pos..], (bank, addr))
                })
                .collect();
            let Some(&addr) = dead.choose(rng) else {
                continue;
            };
            let mut ins = Instruction::random(op, rng);
            ins.out = addr;
            let mut rewritten = program.clone();
            rewritten.function_mut(f).insert(pos, ins);
            return Ok(rewritten);
        }
        Err(RewriteError::NoCapacity)
    }
}

fn different_address<R: Rng + ?Sized>(bank: Bank, current: usize, rng: &mut R) -> usize {
    let n = bank.size();
    if n == 1 {
        return current;
    }
    let pick = rng.random_range(0..n - 1);
    if pick >= current {
        pick + 1
    } else {
        pick
    }
}

fn overwritten_before_read(rest: &[Instruction], target: (Bank, usize)) -> bool {
    for ins in rest {
        if ins.reads().any(|r| r == target) {
            return false;
        }
        if ins.write() == target {
            return true;
        }
    }
    false
}

/// Full training and validation run; returns the validation RMS error.
pub fn validation_rms(program: &ProgramCandidate, task: &Task, init_seed: u64) -> f64 {
    let mut rng = rng::seeded(init_seed, EVAL_INIT_SALT);
    let mut mem = Memory::default();
    mem.run(&program.initialize, &mut rng);
    for ex in &task.train {
        forward_error(program, &mut mem, ex, &mut rng);
        backward(program, &mut mem, ex, &mut rng);
    }
    let mut sum_sq = 0.0;
    for ex in &task.validation {
        let err = forward_error(program, &mut mem, ex, &mut rng);
        sum_sq += err * err;
    }
    (sum_sq / task.validation.len().max(1) as f64).sqrt()
}

/// Trains on the task's training examples and scores on its validation
/// examples. Random initialisers draw from a generator fixed by the task, so
/// with zero noise the result depends only on the program and the task.
pub fn evaluate<R: Rng + ?Sized>(program: &ProgramCandidate, task: &Task, eval: &EvalConfig, noise: &mut R) -> FitnessRecord {
    let rms = validation_rms(program, task, task.spec.data_seed);
    let err = noisy_error(rms, eval.noise_sigma, noise);
    FitnessRecord::single(fitness_from_error(err), eval.eval_cost())
}

/// Prediction error on one canonical example from a freshly initialised
/// memory (hashing generator at `config.fixed_seed`).
pub fn hashable_outputs(program: &ProgramCandidate, task: &Task, phase: Phase, index: usize, config: &HashConfig) -> Vec<f64> {
    let ex = match phase {
        Phase::Train => &task.train[index],
        Phase::Validation => &task.validation[index],
    };
    let mut rng = SplitMix64::new(config.fixed_seed);
    let mut mem = Memory::default();
    mem.run(&program.initialize, &mut rng);
    vec![forward_error(program, &mut mem, ex, &mut rng)]
}

/// Hashing hooks for a program on a task; canonical examples are the first
/// examples of each split.
pub struct ProgramProbe<'a> {
    pub program: &'a ProgramCandidate,
    pub task: &'a Task,
}

impl HashProbe for ProgramProbe<'_> {
    type Example = Example;
    type State = Memory;

    fn canonical_examples(&self, phase: Phase, n: usize, _fixed_seed: u64) -> Vec<Example> {
        let split = match phase {
            Phase::Train => &self.task.train,
            Phase::Validation => &self.task.validation,
        };
        split.iter().take(n).copied().collect()
    }

    fn initialize(&self, rng: &mut SplitMix64) -> Memory {
        let mut mem = Memory::default();
        mem.run(&self.program.initialize, rng);
        mem
    }

    fn forward(&self, mem: &mut Memory, ex: &Example, rng: &mut SplitMix64, outputs: &mut Vec<f64>) {
        outputs.push(forward_error(self.program, mem, ex, rng));
    }

    fn backward(&self, mem: &mut Memory, ex: &Example, rng: &mut SplitMix64) {
        backward(self.program, mem, ex, rng);
    }
}

pub fn functional_hash(program: &ProgramCandidate, task: &Task, config: &HashConfig) -> FunctionalHash {
    ufh::unified_functional_hash(&ProgramProbe { program, task }, config)
}

/// Program space bound to a task and evaluation settings.
#[derive(Clone, Debug)]
pub struct ProgramProblem {
    pub space: ProgramSpace,
    pub task: Task,
    pub eval: EvalConfig,
}

impl ProgramProblem {
    pub fn new(space: ProgramSpace, task: super::TaskSpec, eval: EvalConfig) -> Self {
        let task = Task::new(task, DIM.min(MAX_INPUTS), eval.train_examples, eval.validation_examples);
        Self { space, task, eval }
    }
}

impl Problem for ProgramProblem {
    type Candidate = ProgramCandidate;

    fn random_candidate<R: Rng + ?Sized>(&self, rng: &mut R) -> ProgramCandidate {
        self.space.random_candidate(rng)
    }

    fn mutate<R: Rng + ?Sized>(&self, parent: &ProgramCandidate, rng: &mut R) -> ProgramCandidate {
        self.space.mutate(parent, rng)
    }

    fn evaluate<R: Rng + ?Sized>(&self, candidate: &ProgramCandidate, noise: &mut R) -> FitnessRecord {
        evaluate(candidate, &self.task, &self.eval, noise)
    }

    fn functional_hash(&self, candidate: &ProgramCandidate, config: &HashConfig) -> FunctionalHash {
        functional_hash(candidate, &self.task, config)
    }

    fn structural_key(&self, candidate: &ProgramCandidate) -> u64 {
        super::structural_key(candidate)
    }

    fn true_fitness(&self, candidate: &ProgramCandidate) -> f64 {
        fitness_from_error(validation_rms(candidate, &self.task, self.task.spec.data_seed))
    }

    fn unseen_fitness(&self, candidate: &ProgramCandidate, data_seed: u64) -> f64 {
        // Initialisation stays tied to the search task so only the data changes.
        let unseen = self.task.with_data_seed(data_seed);
        fitness_from_error(validation_rms(candidate, &unseen, self.task.spec.data_seed))
    }
}
