//! Reasoning environments: Game of 24 and a synthetic chain task.
//!
//! Both environments expose the same surface: legal-step enumeration, step
//! application (including the fallible-generator semantics where a wrong
//! claimed result propagates into the state), answer verification, rule-based
//! step labels for process supervision, and canonical serialization of
//! prefixes for tabular keying.

mod game24;

pub use game24::{
    generate_puzzles, parse_puzzle_list, read_puzzle_file, render_puzzle_list, solvable,
    solve_exhaustive,
};

use crate::error::{CoreError, Result};
use crate::GameValue;
use num_traits::{Signed, Zero};
use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

/// Target value for the Game of 24.
pub fn target() -> GameValue {
    GameValue::from_integer(24)
}

pub fn rat_to_string(v: &GameValue) -> String {
    if v.denom() == &1 {
        v.numer().to_string()
    } else {
        format!("{}/{}", v.numer(), v.denom())
    }
}

pub fn rat_from_str(s: &str) -> Result<GameValue> {
    let parse_int = |t: &str| -> Result<i64> {
        t.parse::<i64>()
            .map_err(|_| CoreError::InvalidData(format!("bad rational: {s}")))
    };
    match s.split_once('/') {
        Some((n, d)) => {
            let (n, d) = (parse_int(n)?, parse_int(d)?);
            if d == 0 {
                return Err(CoreError::InvalidData(format!("zero denominator: {s}")));
            }
            Ok(GameValue::new(n, d))
        }
        None => Ok(GameValue::from_integer(parse_int(s)?)),
    }
}

// ---------------------------------------------------------------------------
// Task instances
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TaskSpec {
    /// Four numbers to combine into 24, each used exactly once.
    Game24 { inputs: [GameValue; 4] },
    /// A depth-`steps` chain with one good move and `wrong_branches` fatal
    /// moves per depth; `good_prob[d]` is the generator's chance of the good
    /// move at depth `d`.
    Chain {
        steps: usize,
        wrong_branches: usize,
        good_prob: Vec<GameValue>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskInstance {
    id: String,
    spec: TaskSpec,
}

impl TaskInstance {
    pub fn game24(id: impl Into<String>, inputs: [GameValue; 4]) -> Result<Arc<Self>> {
        let one = GameValue::from_integer(1);
        if inputs.iter().any(|v| *v < one) {
            return Err(CoreError::InvalidConfig(
                "Game24 inputs must each be >= 1".into(),
            ));
        }
        let mut sorted = inputs;
        sorted.sort();
        Ok(Arc::new(Self {
            id: id.into(),
            spec: TaskSpec::Game24 { inputs: sorted },
        }))
    }

    pub fn game24_ints(id: impl Into<String>, inputs: [i64; 4]) -> Result<Arc<Self>> {
        Self::game24(id, inputs.map(GameValue::from_integer))
    }

    pub fn chain(
        id: impl Into<String>,
        steps: usize,
        wrong_branches: usize,
        good_prob: Vec<GameValue>,
    ) -> Result<Arc<Self>> {
        if steps < 1 || wrong_branches < 1 {
            return Err(CoreError::InvalidConfig(
                "Chain requires steps >= 1 and wrong_branches >= 1".into(),
            ));
        }
        if good_prob.len() != steps {
            return Err(CoreError::InvalidConfig(format!(
                "Chain good_prob must have length {steps}"
            )));
        }
        let one = GameValue::from_integer(1);
        if good_prob
            .iter()
            .any(|p| *p <= GameValue::zero() || *p > one)
        {
            return Err(CoreError::InvalidConfig(
                "Chain good_prob entries must lie in (0, 1]".into(),
            ));
        }
        Ok(Arc::new(Self {
            id: id.into(),
            spec: TaskSpec::Chain {
                steps,
                wrong_branches,
                good_prob,
            },
        }))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn is_game24(&self) -> bool {
        matches!(self.spec, TaskSpec::Game24 { .. })
    }

    /// Content-based question header; identical questions share statistics
    /// even under different ids.
    pub fn question_line(&self) -> String {
        match &self.spec {
            TaskSpec::Game24 { inputs } => {
                let toks: Vec<String> = inputs.iter().map(rat_to_string).collect();
                format!("game24 {}", toks.join(" "))
            }
            TaskSpec::Chain {
                steps,
                wrong_branches,
                good_prob,
            } => {
                let toks: Vec<String> = good_prob.iter().map(rat_to_string).collect();
                format!(
                    "chain m={} w={} p={}",
                    steps,
                    wrong_branches,
                    toks.join(",")
                )
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Steps and expressions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub const ALL: [BinOp; 4] = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div];

    pub fn symbol(&self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }

    pub fn from_symbol(c: char) -> Option<BinOp> {
        match c {
            '+' => Some(BinOp::Add),
            '-' => Some(BinOp::Sub),
            '*' => Some(BinOp::Mul),
            '/' => Some(BinOp::Div),
            _ => None,
        }
    }

    pub fn is_commutative(&self) -> bool {
        matches!(self, BinOp::Add | BinOp::Mul)
    }

    /// True arithmetic result; `None` exactly when dividing by zero.
    pub fn apply(&self, a: GameValue, b: GameValue) -> Option<GameValue> {
        match self {
            BinOp::Add => Some(a + b),
            BinOp::Sub => Some(a - b),
            BinOp::Mul => Some(a * b),
            BinOp::Div => (!b.is_zero()).then(|| a / b),
        }
    }
}

/// Arithmetic expression over the original inputs. The answer step of a
/// Game-of-24 path carries the expression composed from its combine history;
/// verification re-evaluates it from scratch, independent of any claimed
/// intermediate results.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expr {
    Leaf(GameValue),
    Node {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
}

impl Expr {
    /// Exact evaluation; `None` if any subterm divides by zero.
    pub fn eval(&self) -> Option<GameValue> {
        match self {
            Expr::Leaf(v) => Some(*v),
            Expr::Node { op, lhs, rhs } => {
                let (a, b) = (lhs.eval()?, rhs.eval()?);
                op.apply(a, b)
            }
        }
    }

    pub fn leaves(&self) -> Vec<GameValue> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out.sort();
        out
    }

    fn collect_leaves(&self, out: &mut Vec<GameValue>) {
        match self {
            Expr::Leaf(v) => out.push(*v),
            Expr::Node { lhs, rhs, .. } => {
                lhs.collect_leaves(out);
                rhs.collect_leaves(out);
            }
        }
    }

    fn fmt_inner(&self, f: &mut fmt::Formatter<'_>, root: bool) -> fmt::Result {
        match self {
            // Non-integer leaves are bracketed so '/' never clashes with the
            // division operator in serialized expressions.
            Expr::Leaf(v) => {
                if v.denom() == &1 && !v.is_negative() {
                    write!(f, "{}", v.numer())
                } else {
                    write!(f, "[{}]", rat_to_string(v))
                }
            }
            Expr::Node { op, lhs, rhs } => {
                if !root {
                    write!(f, "(")?;
                }
                lhs.fmt_inner(f, false)?;
                write!(f, "{}", op.symbol())?;
                rhs.fmt_inner(f, false)?;
                if !root {
                    write!(f, ")")?;
                }
                Ok(())
            }
        }
    }

    /// Parse the serialization produced by `Display`.
    pub fn parse(s: &str) -> Result<Expr> {
        let bytes: Vec<char> = s.chars().collect();
        let mut pos = 0usize;
        let expr = parse_node(&bytes, &mut pos, true)?;
        if pos != bytes.len() {
            return Err(CoreError::InvalidData(format!(
                "trailing input in expr: {s}"
            )));
        }
        Ok(expr)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_inner(f, true)
    }
}

fn parse_atom(chars: &[char], pos: &mut usize) -> Result<Expr> {
    let err = |msg: &str| CoreError::InvalidData(format!("expr parse: {msg}"));
    match chars.get(*pos) {
        Some('(') => {
            *pos += 1;
            let inner = parse_node(chars, pos, false)?;
            if chars.get(*pos) != Some(&')') {
                return Err(err("missing ')'"));
            }
            *pos += 1;
            Ok(inner)
        }
        Some('[') => {
            let end = chars[*pos..]
                .iter()
                .position(|&c| c == ']')
                .ok_or_else(|| err("missing ']'"))?;
            let tok: String = chars[*pos + 1..*pos + end].iter().collect();
            *pos += end + 1;
            Ok(Expr::Leaf(rat_from_str(&tok)?))
        }
        Some(c) if c.is_ascii_digit() => {
            let start = *pos;
            while matches!(chars.get(*pos), Some(c) if c.is_ascii_digit()) {
                *pos += 1;
            }
            let tok: String = chars[start..*pos].iter().collect();
            Ok(Expr::Leaf(rat_from_str(&tok)?))
        }
        _ => Err(err("expected atom")),
    }
}

fn parse_node(chars: &[char], pos: &mut usize, root: bool) -> Result<Expr> {
    let lhs = parse_atom(chars, pos)?;
    let at_end = match chars.get(*pos) {
        None => true,
        Some(')') if !root => true,
        _ => false,
    };
    if at_end {
        return Ok(lhs);
    }
    let op = chars
        .get(*pos)
        .and_then(|&c| BinOp::from_symbol(c))
        .ok_or_else(|| CoreError::InvalidData("expr parse: expected operator".into()))?;
    *pos += 1;
    let rhs = parse_atom(chars, pos)?;
    Ok(Expr::Node {
        op,
        lhs: Box::new(lhs),
        rhs: Box::new(rhs),
    })
}

/// One generator step. `Combine` carries the generator's claimed result,
/// which may disagree with true arithmetic; the environment accepts the claim
/// and lets it propagate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ReasoningStep {
    Combine {
        lhs: GameValue,
        rhs: GameValue,
        op: BinOp,
        claimed: GameValue,
    },
    Answer {
        expr: Expr,
    },
    ChainMove {
        token_index: usize,
    },
}

impl ReasoningStep {
    pub fn combine(lhs: GameValue, rhs: GameValue, op: BinOp, claimed: GameValue) -> Self {
        ReasoningStep::Combine {
            lhs,
            rhs,
            op,
            claimed,
        }
    }

    pub fn combine_ints(lhs: i64, rhs: i64, op: BinOp, claimed: i64) -> Self {
        Self::combine(
            GameValue::from_integer(lhs),
            GameValue::from_integer(rhs),
            op,
            GameValue::from_integer(claimed),
        )
    }

    /// Canonical single-line serialization used in prefix keys and datasets.
    pub fn line(&self) -> String {
        match self {
            ReasoningStep::Combine {
                lhs,
                rhs,
                op,
                claimed,
            } => format!(
                "combine {} {} {} = {}",
                rat_to_string(lhs),
                op.symbol(),
                rat_to_string(rhs),
                rat_to_string(claimed)
            ),
            ReasoningStep::Answer { expr } => format!("answer {expr}"),
            ReasoningStep::ChainMove { token_index } => format!("move {token_index}"),
        }
    }

    pub fn parse_line(line: &str) -> Result<ReasoningStep> {
        let err = |msg: String| CoreError::InvalidData(msg);
        if let Some(rest) = line.strip_prefix("combine ") {
            let toks: Vec<&str> = rest.split_whitespace().collect();
            if toks.len() != 5 || toks[3] != "=" {
                return Err(err(format!("bad combine line: {line}")));
            }
            let op = toks[1]
                .chars()
                .next()
                .and_then(BinOp::from_symbol)
                .filter(|_| toks[1].len() == 1)
                .ok_or_else(|| err(format!("bad operator in: {line}")))?;
            Ok(ReasoningStep::Combine {
                lhs: rat_from_str(toks[0])?,
                rhs: rat_from_str(toks[2])?,
                op,
                claimed: rat_from_str(toks[4])?,
            })
        } else if let Some(rest) = line.strip_prefix("answer ") {
            Ok(ReasoningStep::Answer {
                expr: Expr::parse(rest.trim())?,
            })
        } else if let Some(rest) = line.strip_prefix("move ") {
            let token_index = rest
                .trim()
                .parse::<usize>()
                .map_err(|_| err(format!("bad move line: {line}")))?;
            Ok(ReasoningStep::ChainMove { token_index })
        } else {
            Err(err(format!("unrecognized step line: {line}")))
        }
    }
}

// ---------------------------------------------------------------------------
// Paths
// ---------------------------------------------------------------------------

/// One working slot of a Game-of-24 state: the value the generator believes
/// it holds and the expression that actually produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub claimed: GameValue,
    pub expr: Expr,
    /// True value of `expr`; `None` when the expression divides by zero.
    pub truth: Option<GameValue>,
}

impl Slot {
    fn leaf(v: GameValue) -> Self {
        Slot {
            claimed: v,
            expr: Expr::Leaf(v),
            truth: Some(v),
        }
    }

    fn sort_key(&self) -> (GameValue, Option<GameValue>, &Expr) {
        (self.claimed, self.truth, &self.expr)
    }

    /// Compact token used in abstract state keys: the claimed value, plus the
    /// true value when the two disagree.
    pub fn token(&self) -> String {
        match self.truth {
            Some(t) if t == self.claimed => rat_to_string(&self.claimed),
            Some(t) => format!("{}~{}", rat_to_string(&self.claimed), rat_to_string(&t)),
            None => format!("{}~?", rat_to_string(&self.claimed)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DerivedState {
    Game24 { slots: Vec<Slot>, dead: bool },
    Chain { depth: usize, alive: bool },
}

/// Key granularity for tabular models and memo tables.
///
/// `FullPrefix` keys on the entire question + step sequence, the granularity
/// at which the outcome-supervised fixed point is stated. `AbstractState`
/// keys on the derived state alone, which shares statistics across questions
/// and is what makes tabular scorers useful on held-out puzzles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeyMode {
    FullPrefix,
    AbstractState,
}

/// Whether a path ended with an answer and whether that answer is correct.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnswerVerdict {
    pub answered: bool,
    pub correct: bool,
}

impl AnswerVerdict {
    fn no_answer() -> Self {
        AnswerVerdict {
            answered: false,
            correct: false,
        }
    }
}

/// Rule-based step labels for process supervision. `prm` marks logical
/// correctness of the step in isolation; `prm_o` additionally requires the
/// step to lie on a feasible correct solution path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepLabel {
    pub prm: bool,
    pub prm_o: bool,
}

impl StepLabel {
    pub fn new(prm: bool, prm_o: bool) -> Self {
        StepLabel {
            prm,
            prm_o: prm_o && prm,
        }
    }
}

/// An ordered sequence of steps on one task instance together with its
/// derived state. Immutable: applying a step yields a new path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialPath {
    instance: Arc<TaskInstance>,
    steps: Vec<ReasoningStep>,
    state: DerivedState,
    truncated: bool,
}

impl PartialPath {
    pub fn empty(instance: Arc<TaskInstance>) -> Self {
        let state = match instance.spec() {
            TaskSpec::Game24 { inputs } => {
                let mut slots: Vec<Slot> = inputs.iter().map(|v| Slot::leaf(*v)).collect();
                slots.sort_by(cmp_slots);
                DerivedState::Game24 { slots, dead: false }
            }
            TaskSpec::Chain { .. } => DerivedState::Chain {
                depth: 0,
                alive: true,
            },
        };
        PartialPath {
            instance,
            steps: Vec::new(),
            state,
            truncated: false,
        }
    }

    pub fn instance(&self) -> &Arc<TaskInstance> {
        &self.instance
    }

    pub fn instance_id(&self) -> &str {
        self.instance.id()
    }

    pub fn steps(&self) -> &[ReasoningStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn state(&self) -> &DerivedState {
        &self.state
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    /// Claimed values currently on the table (Game24 only).
    pub fn claimed_values(&self) -> Vec<GameValue> {
        match &self.state {
            DerivedState::Game24 { slots, .. } => slots.iter().map(|s| s.claimed).collect(),
            DerivedState::Chain { .. } => Vec::new(),
        }
    }

    /// A path is terminal once it answered, died, was truncated, or reached
    /// the chain's full depth. Terminal paths accept no further steps.
    pub fn is_terminal(&self) -> bool {
        if self.truncated {
            return true;
        }
        match &self.state {
            DerivedState::Game24 { dead, .. } => {
                *dead || matches!(self.steps.last(), Some(ReasoningStep::Answer { .. }))
            }
            DerivedState::Chain { depth, .. } => match self.instance.spec() {
                TaskSpec::Chain { steps, .. } => depth == steps,
                _ => unreachable!("chain state on non-chain instance"),
            },
        }
    }

    /// Deterministic, canonically ordered legal steps. Game24 offers every
    /// distinct true-result combine while two or more numbers remain (ordered
    /// operand pairs, commutative duplicates collapsed), then the single
    /// history-composed answer; Chain offers all `W + 1` moves.
    pub fn legal_steps(&self) -> Result<Vec<ReasoningStep>> {
        if self.is_terminal() {
            return Err(CoreError::CompletePath);
        }
        match (&self.state, self.instance.spec()) {
            (DerivedState::Game24 { slots, .. }, TaskSpec::Game24 { .. }) => {
                if slots.len() >= 2 {
                    let values: Vec<GameValue> = slots.iter().map(|s| s.claimed).collect();
                    Ok(game24::legal_combines(&values))
                } else {
                    Ok(vec![ReasoningStep::Answer {
                        expr: slots[0].expr.clone(),
                    }])
                }
            }
            (DerivedState::Chain { .. }, TaskSpec::Chain { wrong_branches, .. }) => Ok((0
                ..=*wrong_branches)
                .map(|token_index| ReasoningStep::ChainMove { token_index })
                .collect()),
            _ => unreachable!("state/spec mismatch"),
        }
    }

    /// Apply a step strictly. A combine with a wrong claimed result is
    /// accepted (the claim replaces the operands); a combine whose operands
    /// are absent, a division by a zero claim, or an out-of-range chain move
    /// is rejected.
    pub fn apply_step(&self, step: &ReasoningStep) -> Result<PartialPath> {
        if self.is_terminal() {
            return Err(CoreError::CompletePath);
        }
        let mut next = self.clone();
        next.apply_inner(step)?;
        next.steps.push(step.clone());
        Ok(next)
    }

    /// Apply a step the way a rollout consumes generator output: an illegal
    /// step is still recorded but kills the path (terminal, unanswered).
    pub fn force_step(&self, step: &ReasoningStep) -> Result<PartialPath> {
        match self.apply_step(step) {
            Ok(p) => Ok(p),
            Err(CoreError::CompletePath) => Err(CoreError::CompletePath),
            Err(_) => {
                let mut next = self.clone();
                next.steps.push(step.clone());
                match &mut next.state {
                    DerivedState::Game24 { dead, .. } => *dead = true,
                    DerivedState::Chain { alive, depth } => {
                        *alive = false;
                        *depth += 1;
                    }
                }
                Ok(next)
            }
        }
    }

    pub fn mark_truncated(mut self) -> PartialPath {
        self.truncated = true;
        self
    }

    fn apply_inner(&mut self, step: &ReasoningStep) -> Result<()> {
        match (step, &mut self.state) {
            (
                ReasoningStep::Combine {
                    lhs,
                    rhs,
                    op,
                    claimed,
                },
                DerivedState::Game24 { slots, .. },
            ) => {
                let i = slots
                    .iter()
                    .position(|s| s.claimed == *lhs)
                    .ok_or_else(|| {
                        CoreError::IllegalStep(format!(
                            "operand {} not available",
                            rat_to_string(lhs)
                        ))
                    })?;
                let j = slots
                    .iter()
                    .enumerate()
                    .position(|(k, s)| k != i && s.claimed == *rhs)
                    .ok_or_else(|| {
                        CoreError::IllegalStep(format!(
                            "operand {} not available",
                            rat_to_string(rhs)
                        ))
                    })?;
                if *op == BinOp::Div && rhs.is_zero() {
                    return Err(CoreError::IllegalStep("division by zero".into()));
                }
                let (a, b) = (slots[i].clone(), slots[j].clone());
                let truth = match (a.truth, b.truth) {
                    (Some(x), Some(y)) => op.apply(x, y),
                    _ => None,
                };
                let merged = Slot {
                    claimed: *claimed,
                    expr: Expr::Node {
                        op: *op,
                        lhs: Box::new(a.expr),
                        rhs: Box::new(b.expr),
                    },
                    truth,
                };
                let (hi, lo) = if i > j { (i, j) } else { (j, i) };
                slots.remove(hi);
                slots.remove(lo);
                slots.push(merged);
                slots.sort_by(cmp_slots);
                Ok(())
            }
            (ReasoningStep::Answer { .. }, DerivedState::Game24 { slots, .. }) => {
                if slots.len() != 1 {
                    return Err(CoreError::IllegalStep(
                        "answer requires exactly one remaining number".into(),
                    ));
                }
                Ok(())
            }
            (ReasoningStep::ChainMove { token_index }, DerivedState::Chain { depth, alive }) => {
                let w = match self.instance.spec() {
                    TaskSpec::Chain { wrong_branches, .. } => *wrong_branches,
                    _ => unreachable!(),
                };
                if *token_index > w {
                    return Err(CoreError::IllegalStep(format!(
                        "token index {token_index} out of range 0..={w}"
                    )));
                }
                *depth += 1;
                if *token_index != 0 {
                    *alive = false;
                }
                Ok(())
            }
            _ => Err(CoreError::IllegalStep(
                "step kind does not match environment".into(),
            )),
        }
    }

    /// Answer verdict of a terminal path.
    pub fn verdict(&self) -> Result<AnswerVerdict> {
        if !self.is_terminal() {
            return Err(CoreError::IncompletePath);
        }
        match (&self.state, self.instance.spec()) {
            (DerivedState::Game24 { dead, .. }, TaskSpec::Game24 { inputs }) => {
                if *dead || self.truncated {
                    return Ok(AnswerVerdict::no_answer());
                }
                match self.steps.last() {
                    Some(ReasoningStep::Answer { expr }) => {
                        let value_ok = expr.eval() == Some(target());
                        let mut used = expr.leaves();
                        used.sort();
                        let mut given = inputs.to_vec();
                        given.sort();
                        Ok(AnswerVerdict {
                            answered: true,
                            correct: value_ok && used == given,
                        })
                    }
                    _ => Ok(AnswerVerdict::no_answer()),
                }
            }
            (DerivedState::Chain { depth, alive }, TaskSpec::Chain { steps, .. }) => {
                if depth < steps {
                    Ok(AnswerVerdict::no_answer())
                } else {
                    Ok(AnswerVerdict {
                        answered: true,
                        correct: *alive,
                    })
                }
            }
            _ => unreachable!("state/spec mismatch"),
        }
    }

    /// Canonical key of this prefix.
    ///
    /// `FullPrefix`: the question line followed by one line per step, joined
    /// by `\n`. Injective: two paths share a key iff they carry identical
    /// step sequences on the same question content.
    ///
    /// `AbstractState`: a single line describing the derived state only.
    pub fn canonical_key(&self, mode: KeyMode) -> String {
        match mode {
            KeyMode::FullPrefix => {
                let mut lines = Vec::with_capacity(self.steps.len() + 1);
                lines.push(self.instance.question_line());
                lines.extend(self.steps.iter().map(|s| s.line()));
                lines.join("\n")
            }
            KeyMode::AbstractState => match (&self.state, self.instance.spec()) {
                (DerivedState::Game24 { slots, dead }, TaskSpec::Game24 { .. }) => {
                    let toks: Vec<String> = slots.iter().map(|s| s.token()).collect();
                    let mut key = format!("g24s {}", toks.join(","));
                    if *dead {
                        key.push_str("|dead");
                    }
                    if matches!(self.steps.last(), Some(ReasoningStep::Answer { .. })) {
                        key.push_str("|answered");
                    }
                    if self.truncated {
                        key.push_str("|trunc");
                    }
                    key
                }
                (DerivedState::Chain { depth, alive }, TaskSpec::Chain { .. }) => {
                    format!(
                        "chs {} d={} {}{}",
                        self.instance.question_line(),
                        depth,
                        if *alive { "alive" } else { "dead" },
                        if self.truncated { "|trunc" } else { "" }
                    )
                }
                _ => unreachable!("state/spec mismatch"),
            },
        }
    }

    /// All step prefixes of this path, re-derived by replay: entry `t`
    /// contains the first `t + 1` steps. The final entry is the path itself.
    pub fn prefixes(&self) -> Vec<PartialPath> {
        let mut out = Vec::with_capacity(self.steps.len());
        let mut cur = PartialPath::empty(self.instance.clone());
        for (idx, step) in self.steps.iter().enumerate() {
            if idx + 1 == self.steps.len() {
                out.push(self.clone());
            } else {
                cur = cur
                    .force_step(step)
                    .expect("replaying a recorded step cannot hit a terminal prefix");
                out.push(cur.clone());
            }
        }
        out
    }

    /// Re-derive the state from scratch; used to audit that the cached state
    /// is a pure function of instance + steps.
    pub fn rederive(&self) -> PartialPath {
        let mut cur = PartialPath::empty(self.instance.clone());
        for step in &self.steps {
            cur = cur.force_step(step).expect("recorded steps must replay");
        }
        if self.truncated {
            cur = cur.mark_truncated();
        }
        cur
    }

    /// Compact one-line rendering for traces.
    pub fn display_line(&self) -> String {
        if self.steps.is_empty() {
            return "<empty>".into();
        }
        let parts: Vec<String> = self.steps.iter().map(|s| s.line()).collect();
        parts.join(" ; ")
    }
}

fn cmp_slots(a: &Slot, b: &Slot) -> Ordering {
    a.sort_key().cmp(&b.sort_key())
}

// ---------------------------------------------------------------------------
// Step labels
// ---------------------------------------------------------------------------

/// Label every step of `path` under the rule-based annotation scheme.
pub fn label_path(path: &PartialPath) -> Vec<StepLabel> {
    let mut labels = Vec::with_capacity(path.len());
    let mut prefix = PartialPath::empty(path.instance().clone());
    let mut prefix_ok = true;
    for step in path.steps() {
        let label = label_against_prefix(&prefix, step, prefix_ok);
        prefix_ok = prefix_ok && label.prm_o;
        labels.push(label);
        prefix = prefix.force_step(step).expect("recorded steps must replay");
    }
    labels
}

/// Label a single step proposed at `prefix`.
pub fn label_step(prefix: &PartialPath, step: &ReasoningStep) -> StepLabel {
    let prefix_ok = label_path(prefix).iter().all(|l| l.prm_o);
    label_against_prefix(prefix, step, prefix_ok)
}

fn label_against_prefix(prefix: &PartialPath, step: &ReasoningStep, prefix_ok: bool) -> StepLabel {
    match step {
        ReasoningStep::Combine {
            lhs,
            rhs,
            op,
            claimed,
        } => {
            let values = prefix.claimed_values();
            let available = {
                let i = values.iter().position(|v| v == lhs);
                match i {
                    Some(i) => values.iter().enumerate().any(|(k, v)| k != i && v == rhs),
                    None => false,
                }
            };
            let truth = op.apply(*lhs, *rhs);
            let prm = available && truth == Some(*claimed);
            let prm_o = prm && prefix_ok && {
                // Post-step table with the claim applied.
                let mut post = values.clone();
                let i = post.iter().position(|v| v == lhs).unwrap();
                post.remove(i);
                let j = post.iter().position(|v| v == rhs).unwrap();
                post.remove(j);
                post.push(*claimed);
                solvable(&post)
            };
            StepLabel::new(prm, prm_o)
        }
        ReasoningStep::Answer { .. } => {
            let verdict = prefix
                .force_step(step)
                .ok()
                .and_then(|p| p.verdict().ok())
                .map(|v| v.correct)
                .unwrap_or(false);
            StepLabel::new(verdict, verdict)
        }
        ReasoningStep::ChainMove { token_index } => {
            let prm = *token_index == 0;
            StepLabel::new(prm, prm && prefix_ok)
        }
    }
}
