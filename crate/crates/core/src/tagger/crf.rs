//! Linear-chain CRF scoring, normalization and decoding.
//!
//! Transitions form an `(L + 2) × (L + 2)` matrix indexed `[from, to]`
//! where `L` is the label count, `START = L` and `STOP = L + 1`.

use crate::error::{contract, Result};
use crate::numerics::{logsumexp_unchecked, Tape, Tensor, Var};

/// Score assigned to transitions that break BIO grammar.
pub const FORBIDDEN: f64 = -1e4;

fn check(emissions: &Tensor, transitions: &Tensor) -> Result<(usize, usize)> {
    let (n, labels) = (emissions.rows(), emissions.cols());
    if emissions.shape().len() != 2 || n == 0 || labels == 0 {
        return Err(contract(
            "emissions must be a non-empty [len, labels] matrix",
        ));
    }
    let s = labels + 2;
    if transitions.shape() != [s, s] {
        return Err(contract(format!(
            "transitions must be [{s}, {s}] for {labels} labels, got {:?}",
            transitions.shape()
        )));
    }
    Ok((n, labels))
}

/// Total score of one tag path.
pub fn crf_sequence_score(emissions: &Tensor, transitions: &Tensor, tags: &[usize]) -> Result<f64> {
    let (n, labels) = check(emissions, transitions)?;
    if tags.len() != n {
        return Err(contract(format!(
            "{} tags for {n} emission rows",
            tags.len()
        )));
    }
    if let Some(&bad) = tags.iter().find(|&&t| t >= labels) {
        return Err(contract(format!(
            "tag index {bad} out of range for {labels} labels"
        )));
    }
    let t = |i: usize, j: usize| transitions.at(i, j);
    // Accumulated in the same order as the Viterbi recursion so equal
    // paths produce bit-equal scores.
    let mut score = t(labels, tags[0]) + emissions.at(0, tags[0]);
    for k in 1..n {
        score = score + t(tags[k - 1], tags[k]) + emissions.at(k, tags[k]);
    }
    Ok(score + t(tags[n - 1], labels + 1))
}

/// Forward log-scores `alpha[k][y]`, including emission `k`.
fn forward(emissions: &Tensor, transitions: &Tensor, labels: usize) -> Vec<Vec<f64>> {
    let n = emissions.rows();
    let mut alpha = Vec::with_capacity(n);
    alpha.push(
        (0..labels)
            .map(|y| transitions.at(labels, y) + emissions.at(0, y))
            .collect::<Vec<_>>(),
    );
    let mut buf = vec![0.0; labels];
    for k in 1..n {
        let prev = &alpha[k - 1];
        let row = (0..labels)
            .map(|y| {
                for (p, b) in buf.iter_mut().enumerate() {
                    *b = prev[p] + transitions.at(p, y);
                }
                logsumexp_unchecked(&buf) + emissions.at(k, y)
            })
            .collect();
        alpha.push(row);
    }
    alpha
}

/// Backward log-scores `beta[k][y]`, excluding emission `k`.
fn backward(emissions: &Tensor, transitions: &Tensor, labels: usize) -> Vec<Vec<f64>> {
    let n = emissions.rows();
    let mut beta = vec![vec![0.0; labels]; n];
    for y in 0..labels {
        beta[n - 1][y] = transitions.at(y, labels + 1);
    }
    let mut buf = vec![0.0; labels];
    for k in (0..n - 1).rev() {
        for y in 0..labels {
            for (q, b) in buf.iter_mut().enumerate() {
                *b = transitions.at(y, q) + emissions.at(k + 1, q) + beta[k + 1][q];
            }
            beta[k][y] = logsumexp_unchecked(&buf);
        }
    }
    beta
}

fn log_partition_from(alpha: &[Vec<f64>], transitions: &Tensor, labels: usize) -> f64 {
    let last = alpha.last().expect("non-empty");
    let ends: Vec<f64> = (0..labels)
        .map(|y| last[y] + transitions.at(y, labels + 1))
        .collect();
    logsumexp_unchecked(&ends)
}

/// Log of the sum of `exp(score)` over every tag path.
pub fn crf_log_partition(emissions: &Tensor, transitions: &Tensor) -> Result<f64> {
    let (_, labels) = check(emissions, transitions)?;
    let alpha = forward(emissions, transitions, labels);
    Ok(log_partition_from(&alpha, transitions, labels))
}

/// Highest-scoring tag path. Among equal scores the lower label index wins
/// at every backtracking step.
pub fn viterbi_decode(emissions: &Tensor, transitions: &Tensor) -> Result<Vec<usize>> {
    let (n, labels) = check(emissions, transitions)?;
    let mut delta: Vec<f64> = (0..labels)
        .map(|y| transitions.at(labels, y) + emissions.at(0, y))
        .collect();
    let mut back = Vec::with_capacity(n.saturating_sub(1));
    for k in 1..n {
        let mut next = vec![0.0; labels];
        let mut ptr = vec![0usize; labels];
        for y in 0..labels {
            let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
            for (p, &d) in delta.iter().enumerate() {
                let s = d + transitions.at(p, y);
                if s > best {
                    best = s;
                    arg = p;
                }
            }
            next[y] = best + emissions.at(k, y);
            ptr[y] = arg;
        }
        delta = next;
        back.push(ptr);
    }
    let (mut best, mut last) = (f64::NEG_INFINITY, 0);
    for (y, &d) in delta.iter().enumerate() {
        let s = d + transitions.at(y, labels + 1);
        if s > best {
            best = s;
            last = y;
        }
    }
    let mut path = vec![last; n];
    for k in (1..n).rev() {
        path[k - 1] = back[k - 1][path[k]];
    }
    Ok(path)
}

/// Marginal-based gradients of `log Z - score(tags)` for one sentence.
fn nll_and_grads(
    emissions: &Tensor,
    transitions: &Tensor,
    tags: &[usize],
) -> Result<(f64, Tensor, Tensor)> {
    let (n, labels) = check(emissions, transitions)?;
    let gold = crf_sequence_score(emissions, transitions, tags)?;
    let alpha = forward(emissions, transitions, labels);
    let beta = backward(emissions, transitions, labels);
    let log_z = log_partition_from(&alpha, transitions, labels);
    let s = labels + 2;
    let mut ge = Tensor::zeros(&[n, labels]);
    let mut gt = Tensor::zeros(&[s, s]);
    {
        let gtd = gt.data_mut();
        for y in 0..labels {
            gtd[labels * s + y] += (alpha[0][y] + beta[0][y] - log_z).exp();
            gtd[y * s + labels + 1] +=
                (alpha[n - 1][y] + transitions.at(y, labels + 1) - log_z).exp();
        }
        for k in 1..n {
            for p in 0..labels {
                for q in 0..labels {
                    let lp =
                        alpha[k - 1][p] + transitions.at(p, q) + emissions.at(k, q) + beta[k][q]
                            - log_z;
                    gtd[p * s + q] += lp.exp();
                }
            }
        }
        gtd[labels * s + tags[0]] -= 1.0;
        for k in 1..n {
            gtd[tags[k - 1] * s + tags[k]] -= 1.0;
        }
        gtd[tags[n - 1] * s + labels + 1] -= 1.0;
    }
    for k in 0..n {
        let row = ge.row_mut(k);
        for y in 0..labels {
            row[y] = (alpha[k][y] + beta[k][y] - log_z).exp();
        }
        row[tags[k]] -= 1.0;
    }
    Ok((log_z - gold, ge, gt))
}

/// One sentence of a CRF batch: rows of the emission matrix in token order
/// and the gold tags.
pub(crate) struct CrfTarget<'a> {
    pub rows: &'a [usize],
    pub tags: &'a [usize],
}

/// Summed CRF negative log-likelihood over sentences whose emission rows
/// live in one shared matrix.
pub(crate) fn crf_nll_on_tape(
    tape: &mut Tape,
    emissions: Var,
    transitions: Var,
    targets: &[CrfTarget<'_>],
) -> Result<Var> {
    let all = tape.value(emissions).clone();
    let trans = tape.value(transitions).clone();
    let labels = all.cols();
    let mut ge_all = Tensor::zeros(all.shape());
    let mut gt_all = Tensor::zeros(trans.shape());
    let mut total = 0.0;
    for target in targets {
        let mut sub = Vec::with_capacity(target.rows.len() * labels);
        for &r in target.rows {
            sub.extend_from_slice(all.row(r));
        }
        let sub = Tensor::new(vec![target.rows.len(), labels], sub)?;
        let (nll, ge, gt) = nll_and_grads(&sub, &trans, target.tags)?;
        total += nll;
        for (k, &r) in target.rows.iter().enumerate() {
            for (a, b) in ge_all.row_mut(r).iter_mut().zip(ge.row(k)) {
                *a += b;
            }
        }
        gt_all.add_assign(&gt);
    }
    Ok(tape.fused_scalar(total, vec![(emissions, ge_all), (transitions, gt_all)]))
}

/// CRF negative log-likelihood of one sentence on a tape, for leaves
/// `emissions [n, L]` and `transitions [L + 2, L + 2]`.
pub fn crf_nll(tape: &mut Tape, emissions: Var, transitions: Var, tags: &[usize]) -> Result<Var> {
    let rows: Vec<usize> = (0..tape.value(emissions).rows()).collect();
    crf_nll_on_tape(
        tape,
        emissions,
        transitions,
        &[CrfTarget { rows: &rows, tags }],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_check, seeded_init, InitScheme, ParamStore};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (Tensor, Tensor) {
        let e = (0..n * m).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let t = (0..(m + 2) * (m + 2))
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect();
        (
            Tensor::new(vec![n, m], e).unwrap(),
            Tensor::new(vec![m + 2, m + 2], t).unwrap(),
        )
    }

    fn all_paths(n: usize, m: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|p| (0..m).map(move |y| [p.clone(), vec![y]].concat()))
                .collect();
        }
        out
    }

    #[test]
    fn single_token_examples() {
        let e = Tensor::from_rows(&[vec![0.3, -1.2]]).unwrap();
        let t = Tensor::zeros(&[4, 4]);
        assert_eq!(crf_sequence_score(&e, &t, &[1]).unwrap(), -1.2);
        let expected = (0.3f64.exp() + (-1.2f64).exp()).ln();
        assert!((crf_log_partition(&e, &t).unwrap() - expected).abs() < 1e-15);
        assert_eq!(viterbi_decode(&e, &t).unwrap(), vec![0]);
    }

    #[test]
    fn all_zero_scores() {
        let (n, m) = (4, 3);
        let e = Tensor::zeros(&[n, m]);
        let t = Tensor::zeros(&[m + 2, m + 2]);
        assert_eq!(crf_sequence_score(&e, &t, &[2, 1, 0, 2]).unwrap(), 0.0);
        assert!((crf_log_partition(&e, &t).unwrap() - n as f64 * (m as f64).ln()).abs() < 1e-12);
        assert_eq!(viterbi_decode(&e, &t).unwrap(), vec![0; n]);
    }

    #[test]
    fn hand_summed_score() {
        let e = Tensor::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![0.5, 0.0, -1.0],
            vec![2.0, 2.0, 0.0],
            vec![0.1, 0.2, 0.3],
        ])
        .unwrap();
        let mut t = Tensor::zeros(&[5, 5]);
        t.row_mut(3)[1] = 0.7; // START -> 1
        t.row_mut(1)[0] = -0.4;
        t.row_mut(0)[0] = 0.25;
        t.row_mut(0)[2] = 1.5;
        t.row_mut(2)[4] = -2.0; // 2 -> STOP
        let expected = 0.7 + 2.0 - 0.4 + 0.5 + 0.25 + 2.0 + 1.5 + 0.3 - 2.0;
        assert!((crf_sequence_score(&e, &t, &[1, 0, 0, 2]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_tag() {
        let e = Tensor::zeros(&[2, 2]);
        let t = Tensor::zeros(&[4, 4]);
        assert!(crf_sequence_score(&e, &t, &[0, 2]).is_err());
        assert!(crf_sequence_score(&e, &t, &[0]).is_err());
    }

    #[test]
    fn matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..60 {
            let n = rng.gen_range(1..=5);
            let m = rng.gen_range(1..=4);
            let (e, t) = random_instance(&mut rng, n, m);
            let paths = all_paths(n, m);
            let scores: Vec<f64> = paths
                .iter()
                .map(|p| crf_sequence_score(&e, &t, p).unwrap())
                .collect();
            let z = logsumexp_unchecked(&scores);
            let log_z = crf_log_partition(&e, &t).unwrap();
            assert!((log_z - z).abs() < 1e-9);
            assert!(scores.iter().all(|&s| s <= log_z + 1e-12));
            let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let decoded = viterbi_decode(&e, &t).unwrap();
            assert_eq!(crf_sequence_score(&e, &t, &decoded).unwrap(), best);
        }
    }

    #[test]
    fn nll_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        store.insert(
            "e",
            seeded_init(&[4, 3], InitScheme::UniformGlorot, 1)
                .unwrap()
                .scaled(3.0),
        );
        store.insert(
            "t",
            seeded_init(&[5, 5], InitScheme::UniformGlorot, 2)
                .unwrap()
                .scaled(3.0),
        );
        let report = finite_difference_check(&store, 1e-5, 100, 0, |tape, s| {
            let e = tape.param(s, "e")?;
            let t = tape.param(s, "t")?;
            crf_nll(tape, e, t, &[2, 0, 0, 1])
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }
}
