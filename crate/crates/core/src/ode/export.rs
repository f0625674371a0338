use std::fmt::Write;

use super::Trajectory;

/// States with more elements than this are summarised by norms.
const MAX_LISTED_DIMS: usize = 16;

/// CSV of recorded trajectories. Small states list every coordinate; larger
/// ones list `norm` and `max_abs`. The last row holds the total NFE.
pub fn trajectory_csv(trajectories: &[Trajectory]) -> String {
    let dims = trajectories
        .iter()
        .find_map(|t| t.states.first().map(Vec::len))
        .unwrap_or(0);
    let listed = dims <= MAX_LISTED_DIMS;
    let mut out = String::from("sample,t");
    let mut width = 2;
    if listed {
        for d in 0..dims {
            let _ = write!(out, ",x{d}");
        }
        width += dims;
    } else {
        out.push_str(",norm,max_abs");
        width += 2;
    }
    out.push('\n');
    for (i, traj) in trajectories.iter().enumerate() {
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let _ = write!(out, "{i},{t}");
            if listed {
                for v in s {
                    let _ = write!(out, ",{v}");
                }
            } else {
                let norm = s.iter().map(|a| a * a).sum::<f64>().sqrt();
                let max = s.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
                let _ = write!(out, ",{norm},{max}");
            }
            out.push('\n');
        }
    }
    let total: usize = trajectories.iter().map(|t| t.nfe).sum();
    let _ = write!(out, "nfe,{total}");
    out.push_str(&",".repeat(width - 2));
    out.push('\n');
    out
}
