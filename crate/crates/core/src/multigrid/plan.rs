use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polynomial-order pairs `(P_x, P_σ)` of the multigrid levels, finest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseningPlan {
    levels: Vec<(usize, usize)>,
}

impl CoarseningPlan {
    pub fn levels(&self) -> &[(usize, usize)] {
        &self.levels
    }

    pub fn finest(&self) -> (usize, usize) {
        self.levels[0]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Standard coarsening step `ceil((P + 1) / 2)`, forced to decrease by one
/// where the rule would stall (`P = 2`).
pub fn coarser_order(p: usize) -> usize {
    if p <= 1 {
        return 1;
    }
    let c = (p + 1).div_ceil(2);
    if c >= p {
        p - 1
    } else {
        c
    }
}

/// Builds the plan for `(px, ps)`. Unequal orders are first semi-coarsened in
/// the larger direction until they match, then both are coarsened together
/// down to `(1, 1)`. An explicit table replaces the rule after validation.
pub fn make_coarsening_plan(px: usize, ps: usize, explicit: Option<&[(usize, usize)]>) -> Result<CoarseningPlan> {
    if px == 0 || ps == 0 {
        return Err(Error::InvalidOrder(px.min(ps)));
    }
    if let Some(table) = explicit {
        validate(px, ps, table)?;
        return Ok(CoarseningPlan { levels: table.to_vec() });
    }
    let mut levels = vec![(px, ps)];
    let (mut a, mut b) = (px, ps);
    while (a, b) != (1, 1) {
        if a > b {
            a = coarser_order(a).max(b);
        } else if b > a {
            b = coarser_order(b).max(a);
        } else {
            a = coarser_order(a);
            b = a;
        }
        levels.push((a, b));
    }
    Ok(CoarseningPlan { levels })
}

fn validate(px: usize, ps: usize, table: &[(usize, usize)]) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidPlan(m));
    match (table.first(), table.last()) {
        (Some(&f), Some(&l)) => {
            if f != (px, ps) {
                return bad(format!("finest level {f:?} does not match orders ({px}, {ps})"));
            }
            if l != (1, 1) {
                return bad(format!("coarsest level must be (1, 1), got {l:?}"));
            }
        }
        _ => return bad("empty level table".into()),
    }
    for w in table.windows(2) {
        let ((a, b), (c, d)) = (w[0], w[1]);
        if c > a || d > b || (c, d) == (a, b) {
            return bad(format!("level {:?} does not coarsen {:?}", w[1], w[0]));
        }
    }
    Ok(())
}
