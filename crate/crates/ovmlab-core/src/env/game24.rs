//! Game-of-24 rules: combine enumeration, exhaustive solving, and the
//! memoized solvability table used by expert policies and PRM-O labels.

use super::{BinOp, PartialPath, ReasoningStep, TaskInstance};
use crate::error::{CoreError, Result};
use crate::rng::RngStream;
use crate::GameValue;
use rand_chacha::rand_core::RngCore;
use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, OnceLock, RwLock};

/// Every distinct true-result combine available on `values`, canonically
/// ordered by (operator, lhs, rhs). Commutative operators are emitted with
/// the larger operand first; subtraction and division keep both orders.
/// Division by zero is excluded.
pub(super) fn legal_combines(values: &[GameValue]) -> Vec<ReasoningStep> {
    let mut seen: BTreeSet<(BinOp, GameValue, GameValue)> = BTreeSet::new();
    let n = values.len();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (a, b) = (values[i], values[j]);
            for op in BinOp::ALL {
                if op.is_commutative() && a < b {
                    continue;
                }
                if op.apply(a, b).is_some() {
                    seen.insert((op, a, b));
                }
            }
        }
    }
    seen.into_iter()
        .map(|(op, lhs, rhs)| ReasoningStep::Combine {
            lhs,
            rhs,
            op,
            claimed: op.apply(lhs, rhs).expect("filtered above"),
        })
        .collect()
}

fn memo() -> &'static RwLock<HashMap<Box<[GameValue]>, bool>> {
    static MEMO: OnceLock<RwLock<HashMap<Box<[GameValue]>, bool>>> = OnceLock::new();
    MEMO.get_or_init(|| RwLock::new(HashMap::new()))
}

/// True iff some sequence of true-arithmetic combines reduces `values` to
/// exactly 24. Memoized on the sorted multiset; safe for concurrent readers.
pub fn solvable(values: &[GameValue]) -> bool {
    assert!(!values.is_empty(), "solvable() requires a non-empty state");
    let mut key: Vec<GameValue> = values.to_vec();
    key.sort();
    let key: Box<[GameValue]> = key.into_boxed_slice();
    if let Some(&hit) = memo().read().expect("memo poisoned").get(&key) {
        return hit;
    }
    let result = solvable_uncached(&key);
    memo().write().expect("memo poisoned").insert(key, result);
    result
}

fn solvable_uncached(sorted: &[GameValue]) -> bool {
    if sorted.len() == 1 {
        return sorted[0] == super::target();
    }
    let n = sorted.len();
    let mut tried: BTreeSet<(GameValue, GameValue)> = BTreeSet::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (sorted[i], sorted[j]);
            if !tried.insert((a, b)) {
                continue;
            }
            let mut results: Vec<GameValue> = vec![a + b, a - b, b - a, a * b];
            if let Some(r) = BinOp::Div.apply(a, b) {
                results.push(r);
            }
            if let Some(r) = BinOp::Div.apply(b, a) {
                results.push(r);
            }
            results.sort();
            results.dedup();
            for r in results {
                let mut child: Vec<GameValue> = Vec::with_capacity(n - 1);
                child.extend(
                    sorted
                        .iter()
                        .enumerate()
                        .filter_map(|(k, v)| (k != i && k != j).then_some(*v)),
                );
                child.push(r);
                if solvable(&child) {
                    return true;
                }
            }
        }
    }
    false
}

/// Exhaustively enumerate every distinct correct solution path (true-result
/// combines followed by the composed answer). Empty iff unsolvable.
pub fn solve_exhaustive(instance: &Arc<TaskInstance>) -> Vec<PartialPath> {
    assert!(
        instance.is_game24(),
        "solve_exhaustive() requires a Game24 instance"
    );
    let mut out = Vec::new();
    let root = PartialPath::empty(instance.clone());
    dfs(&root, &mut out);
    out
}

fn dfs(path: &PartialPath, out: &mut Vec<PartialPath>) {
    if path.is_terminal() {
        if path.verdict().map(|v| v.correct).unwrap_or(false) {
            out.push(path.clone());
        }
        return;
    }
    for step in path.legal_steps().expect("non-terminal path") {
        let next = path.apply_step(&step).expect("legal step applies");
        dfs(&next, out);
    }
}

/// Parse a puzzle list: one puzzle per line, four space-separated integers.
/// Blank lines and `#` comment lines are skipped.
pub fn parse_puzzle_list(text: &str) -> Result<Vec<[i64; 4]>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nums: Vec<i64> = line
            .split_whitespace()
            .map(|t| t.parse::<i64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| CoreError::InvalidData(format!("puzzle line {}: {line:?}", lineno + 1)))?;
        if nums.len() != 4 {
            return Err(CoreError::InvalidData(format!(
                "puzzle line {} has {} numbers, expected 4",
                lineno + 1,
                nums.len()
            )));
        }
        out.push([nums[0], nums[1], nums[2], nums[3]]);
    }
    Ok(out)
}

pub fn read_puzzle_file(path: &std::path::Path) -> Result<Vec<[i64; 4]>> {
    parse_puzzle_list(&std::fs::read_to_string(path)?)
}

pub fn render_puzzle_list(puzzles: &[[i64; 4]]) -> String {
    let mut out = String::new();
    for p in puzzles {
        out.push_str(&format!("{} {} {} {}\n", p[0], p[1], p[2], p[3]));
    }
    out
}

/// Deterministically generate `count` distinct solvable puzzles with inputs
/// drawn uniformly from `min..=max`.
pub fn generate_puzzles(
    count: usize,
    min: i64,
    max: i64,
    stream: &RngStream,
) -> Result<Vec<[i64; 4]>> {
    if min < 1 || max < min {
        return Err(CoreError::InvalidConfig(format!(
            "bad puzzle value range {min}..={max}"
        )));
    }
    let mut rng = stream.rng();
    let span = (max - min + 1) as u64;
    let mut seen: BTreeSet<[i64; 4]> = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0u64;
    let max_attempts = 10_000u64.saturating_mul(count.max(1) as u64);
    while out.len() < count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(CoreError::InvalidConfig(format!(
                "could not find {count} distinct solvable puzzles in {min}..={max}"
            )));
        }
        let mut puzzle = [0i64; 4];
        for v in puzzle.iter_mut() {
            *v = min + (rng.next_u64() % span) as i64;
        }
        puzzle.sort_unstable();
        if seen.contains(&puzzle) {
            continue;
        }
        let values: Vec<GameValue> = puzzle.iter().map(|&v| GameValue::from_integer(v)).collect();
        if !solvable(&values) {
            continue;
        }
        seen.insert(puzzle);
        out.push(puzzle);
    }
    Ok(out)
}
