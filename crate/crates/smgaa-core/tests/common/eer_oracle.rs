//! Brute-force equal-error-rate oracle, deliberately written as direct
//! counting loops so the production implementation can be checked against an
//! independent restatement of the definition.

use smgaa_core::features::Label;

/// Direct O(n·m) recomputation of the interpolated equal error rate: count
/// both error fractions at every candidate threshold by brute force, then
/// find the first sign change of their difference.
pub fn naive_eer(scores: &[(f64, Label)]) -> (f64, f64) {
    let bona: Vec<f64> =
        scores.iter().filter(|(_, l)| *l == Label::BonaFide).map(|&(s, _)| s).collect();
    let spoof: Vec<f64> =
        scores.iter().filter(|(_, l)| *l == Label::Spoof).map(|&(s, _)| s).collect();
    let far = |t: f64| bona.iter().filter(|&&v| v > t).count() as f64 / bona.len() as f64;
    let frr = |t: f64| spoof.iter().filter(|&&v| v < t).count() as f64 / spoof.len() as f64;

    let mut cands: Vec<f64> = scores.iter().map(|&(s, _)| s).collect();
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cands.dedup();
    cands.insert(0, cands[0] - 1.0);

    let mut prev: Option<(f64, f64, f64)> = None; // (t, far, d)
    for &t in &cands {
        let (f, d) = (far(t), far(t) - frr(t));
        if d == 0.0 {
            return (f, t);
        }
        if let Some((pt, pf, pd)) = prev {
            if (pd > 0.0) != (d > 0.0) {
                let alpha = pd / (pd - d);
                return (pf + alpha * (f - pf), pt + alpha * (t - pt));
            }
        }
        prev = Some((t, f, d));
    }
    panic!("curves never crossed");
}

/// Assemble labeled score pairs from separate per-class score lists.
pub fn pairs(bona: &[f64], spoof: &[f64]) -> Vec<(f64, Label)> {
    bona.iter()
        .map(|&s| (s, Label::BonaFide))
        .chain(spoof.iter().map(|&s| (s, Label::Spoof)))
        .collect()
}
