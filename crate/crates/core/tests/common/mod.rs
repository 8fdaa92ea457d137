#![allow(dead_code)]

use proptest::prelude::*;
use sr_options::{build_mdp, parse_grid, TabularMDP};

/// Random walled map with at least one floor cell.
pub fn grid_text() -> impl Strategy<Value = String> {
    (1usize..6, 1usize..6)
        .prop_flat_map(|(h, w)| (Just((h, w)), prop::collection::vec(prop::bool::weighted(0.7), h * w)))
        .prop_map(|((h, w), mut open)| {
            open[0] = true;
            let wall = "#".repeat(w + 2);
            let mut rows = vec![wall.clone()];
            for r in 0..h {
                let inner: String = (0..w).map(|c| if open[r * w + c] { '.' } else { '#' }).collect();
                rows.push(format!("#{inner}#"));
            }
            rows.push(wall);
            rows.join("\n")
        })
}

pub fn mdp_of(text: &str) -> TabularMDP {
    build_mdp(&parse_grid(text).unwrap(), 0.9).unwrap()
}

pub fn bundled(name: &str) -> TabularMDP {
    build_mdp(&sr_options::GridSpec::bundled(name).unwrap(), 0.9).unwrap()
}
