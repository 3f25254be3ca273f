//! Count solvable 4-number multisets for small value ranges.

use ovmlab_core::env::solvable;
use ovmlab_core::GameValue;

fn main() {
    for max in [6i64, 10, 13] {
        let mut total = 0usize;
        let mut ok = 0usize;
        for a in 1..=max {
            for b in a..=max {
                for c in b..=max {
                    for d in c..=max {
                        total += 1;
                        let vals: Vec<GameValue> = [a, b, c, d]
                            .iter()
                            .map(|&v| GameValue::from_integer(v))
                            .collect();
                        ok += solvable(&vals) as usize;
                    }
                }
            }
        }
        println!("1..{max}: {ok}/{total} solvable");
    }
}
