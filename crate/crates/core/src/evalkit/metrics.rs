use crate::avdata::Label;
use crate::error::{Error, Result};

fn check_classes(scores: &[(f64, Label)]) -> Result<(usize, usize)> {
    let n_fake = scores.iter().filter(|(_, l)| *l == Label::Fake).count();
    let n_real = scores.len() - n_fake;
    if n_fake == 0 || n_real == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes, got {n_fake} fake and {n_real} real"
        )));
    }
    if let Some((s, _)) = scores.iter().find(|(s, _)| s.is_nan()) {
        return Err(Error::UndefinedMetric(format!("score {s} is not comparable")));
    }
    Ok((n_fake, n_real))
}

/// Mann-Whitney AUC with fake as the positive class: the probability that a
/// random fake outscores a random real, ties counting one half.
pub fn auc(scores: &[(f64, Label)]) -> Result<f64> {
    let (n_fake, n_real) = check_classes(scores)?;
    let mut sorted: Vec<(f64, Label)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of mid-ranks (1-based) of the fakes.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len() && sorted[end].0 == sorted[start].0 {
            end += 1;
        }
        let mid = (start + 1 + end) as f64 / 2.0;
        let fakes = sorted[start..end].iter().filter(|(_, l)| *l == Label::Fake).count();
        rank_sum += mid * fakes as f64;
        start = end;
    }
    let (nf, nr) = (n_fake as f64, n_real as f64);
    Ok((rank_sum - nf * (nf + 1.0) / 2.0) / (nf * nr))
}

/// Mean over all (fake, real) pairs of `[s_f > s_r] + 0.5 [s_f == s_r]`.
pub fn brute_force_auc(scores: &[(f64, Label)]) -> Result<f64> {
    let (n_fake, n_real) = check_classes(scores)?;
    let mut acc = 0.0;
    for (sf, _) in scores.iter().filter(|(_, l)| *l == Label::Fake) {
        for (sr, _) in scores.iter().filter(|(_, l)| *l == Label::Real) {
            acc += if sf > sr { 1.0 } else if sf == sr { 0.5 } else { 0.0 };
        }
    }
    Ok(acc / (n_fake * n_real) as f64)
}
