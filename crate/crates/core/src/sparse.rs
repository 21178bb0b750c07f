//! Sparse dictionary learning over image patches and ISTA sparse coding,
//! used to emphasize structured patterns in recurrence-plot images.
//!
//! Coding solves `min_a 0.5*||x - D a||^2 + lambda*||a||_1` by iterative
//! shrinkage-thresholding with step `1/L`, `L` the largest eigenvalue of
//! `D^T D`. Learning alternates warm-started coding with a unit-norm
//! constrained least-squares update of each atom, which keeps the total
//! objective non-increasing between dead-atom re-seeds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rp::UnitImage;

const UNIT_NORM_TOL: f64 = 1e-9;

/// Set of unit-norm atoms. `patch_side` is present when the atoms represent
/// square image patches (atom dimension = patch_side^2).
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atom_dim: usize,
    patch_side: Option<usize>,
    /// Row-major `K x atom_dim`.
    atoms: Vec<f64>,
}

impl Dictionary {
    /// Dictionary over flattened square patches.
    pub fn for_patches(patch_side: usize, atoms: Vec<Vec<f64>>) -> Result<Self> {
        let dict = Self::from_atoms(patch_side * patch_side, atoms)?;
        Ok(Dictionary {
            patch_side: Some(patch_side),
            ..dict
        })
    }

    /// Dictionary over raw vectors of dimension `atom_dim`.
    pub fn from_atoms(atom_dim: usize, atoms: Vec<Vec<f64>>) -> Result<Self> {
        if atoms.is_empty() || atom_dim == 0 {
            return Err(Error::Input("dictionary needs at least one atom".into()));
        }
        let mut flat = Vec::with_capacity(atoms.len() * atom_dim);
        for (k, atom) in atoms.iter().enumerate() {
            if atom.len() != atom_dim {
                return Err(Error::Shape(format!(
                    "atom {k} has dimension {}, expected {atom_dim}",
                    atom.len()
                )));
            }
            let norm = atom.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Input(format!(
                    "atom {k} has norm {norm}, expected 1 within {UNIT_NORM_TOL}"
                )));
            }
            flat.extend_from_slice(atom);
        }
        Ok(Dictionary {
            atom_dim,
            patch_side: None,
            atoms: flat,
        })
    }

    /// Used by the binary loader, which validates fields itself.
    pub(crate) fn from_flat(atom_dim: usize, patch_side: Option<usize>, atoms: Vec<f64>) -> Self {
        Dictionary {
            atom_dim,
            patch_side,
            atoms,
        }
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len() / self.atom_dim
    }

    pub fn atom_dim(&self) -> usize {
        self.atom_dim
    }

    pub fn patch_side(&self) -> Option<usize> {
        self.patch_side
    }

    pub fn atom(&self, k: usize) -> &[f64] {
        &self.atoms[k * self.atom_dim..(k + 1) * self.atom_dim]
    }

    /// `D a`: combine atoms with the given coefficients.
    pub fn reconstruct(&self, coefficients: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.atom_dim];
        for (k, &c) in coefficients.iter().enumerate() {
            if c != 0.0 {
                for (o, a) in out.iter_mut().zip(self.atom(k)) {
                    *o += c * a;
                }
            }
        }
        out
    }

    /// `D^T r` for a residual vector `r`.
    fn correlate(&self, r: &[f64]) -> Vec<f64> {
        (0..self.atom_count())
            .map(|k| self.atom(k).iter().zip(r).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Largest eigenvalue of `D^T D` by power iteration, inflated slightly so
    /// the ISTA step `1/L` stays on the safe side of the true Lipschitz bound.
    pub fn lipschitz_bound(&self) -> f64 {
        let k = self.atom_count();
        let mut v = vec![1.0 / (k as f64).sqrt(); k];
        let mut eig = 1.0;
        for _ in 0..128 {
            let dv = self.reconstruct(&v);
            let mut w = self.correlate(&dv);
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            for x in w.iter_mut() {
                *x /= norm;
            }
            eig = norm;
            v = w;
        }
        (eig * 1.05).max(1e-12)
    }
}

/// Coefficients produced by ISTA for one input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub coefficients: Vec<f64>,
    pub lambda: f64,
}

fn soft_threshold(z: f64, thr: f64) -> f64 {
    if z > thr {
        z - thr
    } else if z < -thr {
        z + thr
    } else {
        0.0
    }
}

fn objective(dict: &Dictionary, x: &[f64], a: &[f64], lambda: f64) -> f64 {
    let recon = dict.reconstruct(a);
    let resid: f64 = x.iter().zip(&recon).map(|(p, q)| (p - q) * (p - q)).sum();
    0.5 * resid + lambda * a.iter().map(|c| c.abs()).sum::<f64>()
}

fn check_coding_inputs(dict: &Dictionary, x: &[f64], lambda: f64, iters: usize) -> Result<()> {
    if x.len() != dict.atom_dim() {
        return Err(Error::Shape(format!(
            "input dimension {} does not match atom dimension {}",
            x.len(),
            dict.atom_dim()
        )));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Parameter {
            name: "lambda",
            reason: format!("sparsity weight must be finite and > 0, got {lambda}"),
        });
    }
    if iters < 1 {
        return Err(Error::Parameter {
            name: "iters",
            reason: "iteration count must be >= 1".into(),
        });
    }
    Ok(())
}

fn ista(
    dict: &Dictionary,
    x: &[f64],
    lambda: f64,
    iters: usize,
    lipschitz: f64,
    init: &[f64],
    mut trace: Option<&mut Vec<f64>>,
) -> Vec<f64> {
    let step = 1.0 / lipschitz;
    let thr = lambda / lipschitz;
    let mut a = init.to_vec();
    for _ in 0..iters {
        let recon = dict.reconstruct(&a);
        let resid: Vec<f64> = x.iter().zip(&recon).map(|(p, q)| p - q).collect();
        let grad = dict.correlate(&resid);
        for (ak, g) in a.iter_mut().zip(&grad) {
            *ak = soft_threshold(*ak + step * g, thr);
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(objective(dict, x, &a, lambda));
        }
    }
    a
}

/// ISTA sparse coding from a zero initial code.
pub fn sparse_code(x: &[f64], dict: &Dictionary, lambda: f64, iters: usize) -> Result<SparseCode> {
    check_coding_inputs(dict, x, lambda, iters)?;
    let l = dict.lipschitz_bound();
    let coefficients = ista(dict, x, lambda, iters, l, &vec![0.0; dict.atom_count()], None);
    Ok(SparseCode {
        coefficients,
        lambda,
    })
}

/// Like [`sparse_code`] but also returns the per-iteration objective values,
/// which are non-increasing.
pub fn sparse_code_traced(
    x: &[f64],
    dict: &Dictionary,
    lambda: f64,
    iters: usize,
) -> Result<(SparseCode, Vec<f64>)> {
    check_coding_inputs(dict, x, lambda, iters)?;
    let l = dict.lipschitz_bound();
    let mut trace = Vec::with_capacity(iters);
    let coefficients = ista(
        dict,
        x,
        lambda,
        iters,
        l,
        &vec![0.0; dict.atom_count()],
        Some(&mut trace),
    );
    Ok((
        SparseCode {
            coefficients,
            lambda,
        },
        trace,
    ))
}

/// Row-major flattened square patches at the given stride.
/// Count is `(floor((side - p) / s) + 1)^2`.
pub fn extract_patches(img: &UnitImage, patch_side: usize, stride: usize) -> Result<Vec<Vec<f64>>> {
    if patch_side == 0 || patch_side > img.side() {
        return Err(Error::Sizing(format!(
            "patch side {patch_side} must be in 1..={}",
            img.side()
        )));
    }
    if stride == 0 {
        return Err(Error::Sizing("stride must be >= 1".into()));
    }
    let per_axis = (img.side() - patch_side) / stride + 1;
    let mut patches = Vec::with_capacity(per_axis * per_axis);
    for py in 0..per_axis {
        for px in 0..per_axis {
            let mut patch = Vec::with_capacity(patch_side * patch_side);
            for dy in 0..patch_side {
                let row = py * stride + dy;
                for dx in 0..patch_side {
                    patch.push(img.get(row, px * stride + dx));
                }
            }
            patches.push(patch);
        }
    }
    Ok(patches)
}

/// One dead-atom re-seed event during learning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReseedEvent {
    pub epoch: usize,
    pub atom: usize,
}

/// Objective trace and re-seed log from [`learn_dictionary`].
#[derive(Debug, Clone, Default)]
pub struct LearnLog {
    /// Total objective after each epoch's coding + atom updates.
    pub objective_per_epoch: Vec<f64>,
    pub reseeds: Vec<ReseedEvent>,
}

/// Learn `k` unit-norm atoms from the given patches by alternating
/// warm-started ISTA coding with per-atom constrained least-squares updates.
/// Deterministic given `seed`.
pub fn learn_dictionary(
    patches: &[Vec<f64>],
    k: usize,
    lambda: f64,
    epochs: usize,
    iters_per_code: usize,
    seed: u64,
) -> Result<(Dictionary, LearnLog)> {
    if patches.is_empty() {
        return Err(Error::Input("cannot learn a dictionary from zero patches".into()));
    }
    let dim = patches[0].len();
    if dim == 0 {
        return Err(Error::Input("patches must have positive dimension".into()));
    }
    for (i, p) in patches.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::Shape(format!(
                "patch {i} has dimension {}, expected {dim}",
                p.len()
            )));
        }
    }
    if k < 1 {
        return Err(Error::Parameter {
            name: "k",
            reason: "atom count must be >= 1".into(),
        });
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Parameter {
            name: "lambda",
            reason: format!("sparsity weight must be finite and > 0, got {lambda}"),
        });
    }
    if epochs < 1 || iters_per_code < 1 {
        return Err(Error::Parameter {
            name: "epochs",
            reason: "epochs and iters_per_code must be >= 1".into(),
        });
    }

    // Seed atoms from randomly chosen patches.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..patches.len()).collect();
    order.shuffle(&mut rng);
    let mut atoms = vec![0.0; k * dim];
    for a in 0..k {
        let src = &patches[order[a % order.len()]];
        if !normalize_into(&mut atoms[a * dim..(a + 1) * dim], src) {
            canonical_unit(&mut atoms[a * dim..(a + 1) * dim], a);
        }
    }

    let patch_side = {
        let root = (dim as f64).sqrt().round() as usize;
        (root * root == dim).then_some(root)
    };
    let mut dict = Dictionary {
        atom_dim: dim,
        patch_side,
        atoms,
    };

    let n = patches.len();
    let mut codes = vec![vec![0.0; k]; n];
    let mut log = LearnLog::default();

    for epoch in 0..epochs {
        // Coding pass, warm-started from the previous epoch's codes.
        let l = dict.lipschitz_bound();
        for (code, x) in codes.iter_mut().zip(patches) {
            *code = ista(&dict, x, lambda, iters_per_code, l, code, None);
        }

        // Residuals R_i = x_i - D a_i, maintained through the atom updates.
        let mut residuals: Vec<Vec<f64>> = codes
            .iter()
            .zip(patches)
            .map(|(a, x)| {
                let recon = dict.reconstruct(a);
                x.iter().zip(&recon).map(|(p, q)| p - q).collect()
            })
            .collect();

        for atom_idx in 0..k {
            let usage: f64 = codes.iter().map(|a| a[atom_idx] * a[atom_idx]).sum();
            let mut direction = vec![0.0; dim];
            if usage > 1e-30 {
                // u = sum_i a_ik (R_i + D_k a_ik); the constrained optimum is u/||u||.
                for (a, r) in codes.iter().zip(&residuals) {
                    let c = a[atom_idx];
                    if c != 0.0 {
                        for (u, rv) in direction.iter_mut().zip(r) {
                            *u += c * rv;
                        }
                    }
                }
                for (u, d) in direction.iter_mut().zip(dict.atom(atom_idx)) {
                    *u += usage * d;
                }
            }
            let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
            if usage <= 1e-30 || norm <= 1e-30 {
                // Dead atom: re-seed from the worst-reconstructed patch. Its
                // coefficients are all zero, so the objective is unchanged.
                let worst = residuals
                    .iter()
                    .enumerate()
                    .max_by(|(_, a), (_, b)| {
                        let na: f64 = a.iter().map(|v| v * v).sum();
                        let nb: f64 = b.iter().map(|v| v * v).sum();
                        na.total_cmp(&nb)
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                let start = atom_idx * dim;
                if !normalize_into(&mut dict.atoms[start..start + dim], &patches[worst]) {
                    canonical_unit(&mut dict.atoms[start..start + dim], atom_idx);
                }
                log.reseeds.push(ReseedEvent {
                    epoch,
                    atom: atom_idx,
                });
                continue;
            }
            let old: Vec<f64> = dict.atom(atom_idx).to_vec();
            let start = atom_idx * dim;
            for (dst, u) in dict.atoms[start..start + dim].iter_mut().zip(&direction) {
                *dst = u / norm;
            }
            // Keep residuals consistent with the moved atom.
            let moved: Vec<f64> = old
                .iter()
                .zip(dict.atom(atom_idx))
                .map(|(o, n)| o - n)
                .collect();
            for (a, r) in codes.iter().zip(residuals.iter_mut()) {
                let c = a[atom_idx];
                if c != 0.0 {
                    for (rv, m) in r.iter_mut().zip(&moved) {
                        *rv += c * m;
                    }
                }
            }
        }

        let total: f64 = residuals
            .iter()
            .zip(&codes)
            .map(|(r, a)| {
                0.5 * r.iter().map(|v| v * v).sum::<f64>()
                    + lambda * a.iter().map(|c| c.abs()).sum::<f64>()
            })
            .sum();
        log.objective_per_epoch.push(total);
    }

    Ok((dict, log))
}

/// Normalize `src` into `dst`; false when `src` has (near-)zero norm.
fn normalize_into(dst: &mut [f64], src: &[f64]) -> bool {
    let norm = src.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 1e-30 {
        return false;
    }
    for (d, s) in dst.iter_mut().zip(src) {
        *d = s / norm;
    }
    true
}

fn canonical_unit(dst: &mut [f64], index: usize) {
    dst.fill(0.0);
    let dim = dst.len();
    dst[index % dim] = 1.0;
}

/// Emphasize structured content: sparse-code each patch, reassemble the
/// reconstruction (averaging overlaps), min-max normalize it to [0, 1], and
/// multiply the original image by the resulting mask. Pixels not covered by
/// any patch get a neutral mask of 1, as does a constant reconstruction.
pub fn emphasize(
    img: &UnitImage,
    dict: &Dictionary,
    lambda: f64,
    stride: usize,
    iters: usize,
) -> Result<UnitImage> {
    let patch_side = dict
        .patch_side()
        .ok_or_else(|| Error::Shape("dictionary is not patch-structured (no patch side)".into()))?;
    let patches = extract_patches(img, patch_side, stride)?;
    let l = dict.lipschitz_bound();
    let side = img.side();
    let mut recon_sum = vec![0.0; side * side];
    let mut counts = vec![0u32; side * side];
    let per_axis = (side - patch_side) / stride + 1;
    for (idx, patch) in patches.iter().enumerate() {
        check_coding_inputs(dict, patch, lambda, iters)?;
        let code = ista(dict, patch, lambda, iters, l, &vec![0.0; dict.atom_count()], None);
        let recon = dict.reconstruct(&code);
        let py = idx / per_axis;
        let px = idx % per_axis;
        for dy in 0..patch_side {
            let row = (py * stride + dy) * side + px * stride;
            for dx in 0..patch_side {
                recon_sum[row + dx] += recon[dy * patch_side + dx];
                counts[row + dx] += 1;
            }
        }
    }

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (s, &c) in recon_sum.iter_mut().zip(&counts) {
        if c > 0 {
            *s /= c as f64;
            lo = lo.min(*s);
            hi = hi.max(*s);
        }
    }
    let span = hi - lo;
    let values = img
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mask = if counts[i] == 0 || span <= 0.0 {
                1.0
            } else {
                ((recon_sum[i] - lo) / span).clamp(0.0, 1.0)
            };
            v * mask
        })
        .collect();
    UnitImage::new(side, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn unit_vec(v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    fn random_unit_atoms(rng: &mut ChaCha8Rng, k: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..k)
            .map(|_| unit_vec((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect()
    }

    /// Gaussian elimination with partial pivoting; test-side oracle helper.
    fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let n = b.len();
        for col in 0..n {
            let pivot = (col..n).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))?;
            if a[pivot][col].abs() < 1e-12 {
                return None;
            }
            a.swap(col, pivot);
            b.swap(col, pivot);
            for row in 0..n {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for c in col..n {
                        a[row][c] -= f * a[col][c];
                    }
                    b[row] -= f * b[col];
                }
            }
        }
        Some((0..n).map(|i| b[i] / a[i][i]).collect())
    }

    /// Exhaustive lasso optimum over sign patterns with a per-pattern
    /// closed-form solve. Every candidate is a feasible point, and the true
    /// optimum's pattern is among them, so the minimum is exact.
    fn lasso_optimum_by_enumeration(dict: &Dictionary, x: &[f64], lambda: f64) -> f64 {
        let k = dict.atom_count();
        let mut best = objective(dict, x, &vec![0.0; k], lambda);
        let patterns = 3usize.pow(k as u32);
        for code in 0..patterns {
            let mut signs = Vec::with_capacity(k);
            let mut c = code;
            for _ in 0..k {
                signs.push((c % 3) as i64 - 1); // -1, 0, +1
                c /= 3;
            }
            let support: Vec<usize> = (0..k).filter(|&i| signs[i] != 0).collect();
            if support.is_empty() {
                continue;
            }
            let m = support.len();
            let mut gram = vec![vec![0.0; m]; m];
            let mut rhs = vec![0.0; m];
            for (p, &i) in support.iter().enumerate() {
                for (q, &j) in support.iter().enumerate() {
                    gram[p][q] = dict.atom(i).iter().zip(dict.atom(j)).map(|(a, b)| a * b).sum();
                }
                let corr: f64 = dict.atom(i).iter().zip(x).map(|(a, b)| a * b).sum();
                rhs[p] = corr - lambda * signs[i] as f64;
            }
            if let Some(sol) = solve_dense(gram, rhs) {
                let mut a = vec![0.0; k];
                for (p, &i) in support.iter().enumerate() {
                    a[i] = sol[p];
                }
                best = best.min(objective(dict, x, &a, lambda));
            }
        }
        best
    }

    #[test]
    fn one_atom_closed_form_shrinkage() {
        let x = vec![3.0, 4.0]; // norm 5
        let dict = Dictionary::from_atoms(2, vec![unit_vec(x.clone())]).unwrap();
        let lambda = 0.25;
        let code = sparse_code(&x, &dict, lambda, 300).unwrap();
        let expected = 5.0 - lambda;
        assert!(
            (code.coefficients[0] - expected).abs() < 1e-9,
            "coefficient {} vs {expected}",
            code.coefficients[0]
        );
    }

    #[test]
    fn large_lambda_gives_zero_code() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dict = Dictionary::from_atoms(6, random_unit_atoms(&mut rng, 3, 6)).unwrap();
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let max_corr = (0..3)
            .map(|k| dict.atom(k).iter().zip(&x).map(|(a, b)| a * b).sum::<f64>().abs())
            .fold(0.0f64, f64::max);
        let code = sparse_code(&x, &dict, max_corr * 1.001, 50).unwrap();
        assert!(code.coefficients.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn ista_matches_sign_pattern_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dict = Dictionary::from_atoms(8, random_unit_atoms(&mut rng, 4, 8)).unwrap();
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lambda = 0.1;
        let (code, trace) = sparse_code_traced(&x, &dict, lambda, 200).unwrap();
        let achieved = objective(&dict, &x, &code.coefficients, lambda);
        let optimum = lasso_optimum_by_enumeration(&dict, &x, lambda);
        assert!(
            achieved - optimum < 1e-6 && achieved >= optimum - 1e-12,
            "ISTA objective {achieved} vs enumerated optimum {optimum}"
        );
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "objective increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn coding_rejects_dimension_mismatch() {
        let dict = Dictionary::from_atoms(2, vec![vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            sparse_code(&[1.0, 2.0, 3.0], &dict, 0.1, 10),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn patch_extraction_counts() {
        let img4 = UnitImage::new(4, (0..16).map(|i| i as f64 / 16.0).collect()).unwrap();
        let whole = extract_patches(&img4, 4, 1).unwrap();
        assert_eq!(whole.len(), 1);
        assert_eq!(whole[0], img4.values());

        let quads = extract_patches(&img4, 2, 2).unwrap();
        assert_eq!(quads.len(), 4);
        assert_eq!(quads[0], vec![img4.get(0, 0), img4.get(0, 1), img4.get(1, 0), img4.get(1, 1)]);
        assert_eq!(quads[3], vec![img4.get(2, 2), img4.get(2, 3), img4.get(3, 2), img4.get(3, 3)]);

        let img6 = UnitImage::new(6, vec![0.5; 36]).unwrap();
        let patches = extract_patches(&img6, 3, 1).unwrap();
        // (floor((6-3)/1)+1)^2 = 16, cross-checked by enumeration.
        let mut enumerated = 0;
        let mut y = 0;
        while y + 3 <= 6 {
            let mut x = 0;
            while x + 3 <= 6 {
                enumerated += 1;
                x += 1;
            }
            y += 1;
        }
        assert_eq!(patches.len(), 16);
        assert_eq!(patches.len(), enumerated);

        assert!(matches!(extract_patches(&img4, 5, 1), Err(Error::Sizing(_))));
    }

    #[test]
    fn rank_one_data_recovers_the_direction() {
        let u = unit_vec(vec![1.0, 2.0, -1.0, 0.5]);
        let patches: Vec<Vec<f64>> = (0..10).map(|_| u.clone()).collect();
        let (dict, _) = learn_dictionary(&patches, 1, 0.01, 5, 100, 3).unwrap();
        let dot: f64 = dict.atom(0).iter().zip(&u).map(|(a, b)| a * b).sum();
        assert!(
            (dot.abs() - 1.0).abs() < 1e-6,
            "learned atom should align with the data direction, |dot| = {}",
            dot.abs()
        );
    }

    #[test]
    fn spanning_dictionary_drives_reconstruction_error_to_zero() {
        // K = number of linearly independent patches and lambda -> 0.
        let patches = vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ];
        let (dict, _) = learn_dictionary(&patches, 4, 1e-8, 10, 400, 5).unwrap();
        for p in &patches {
            let code = sparse_code(p, &dict, 1e-8, 400).unwrap();
            let recon = dict.reconstruct(&code.coefficients);
            let err: f64 = p.iter().zip(&recon).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            assert!(err < 1e-4, "reconstruction error {err}");
        }
    }

    #[test]
    fn learning_objective_is_monotone_between_reseeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let patches: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let (dict, log) = learn_dictionary(&patches, 8, 0.1, 20, 60, 17).unwrap();
        assert_eq!(log.objective_per_epoch.len(), 20);
        let reseed_epochs: Vec<usize> = log.reseeds.iter().map(|e| e.epoch).collect();
        for (i, w) in log.objective_per_epoch.windows(2).enumerate() {
            if !reseed_epochs.contains(&(i + 1)) {
                assert!(
                    w[1] <= w[0] + 1e-9,
                    "objective rose between epochs {i} and {}: {} -> {}",
                    i + 1,
                    w[0],
                    w[1]
                );
            }
        }
        // Unit norms hold after learning.
        for k in 0..dict.atom_count() {
            let norm: f64 = dict.atom(k).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9, "atom {k} norm {norm}");
        }
    }

    #[test]
    fn learning_is_deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let patches: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..9).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let (d1, _) = learn_dictionary(&patches, 4, 0.05, 6, 40, 23).unwrap();
        let (d2, _) = learn_dictionary(&patches, 4, 0.05, 6, 40, 23).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn emphasize_neutral_and_zero_cases() {
        // Constant image -> patches code to (near) constant reconstructions ->
        // constant mask convention multiplies by 1 everywhere.
        let img = UnitImage::new(6, vec![0.4; 36]).unwrap();
        let atoms = vec![unit_vec(vec![1.0; 9])];
        let dict = Dictionary::for_patches(3, atoms).unwrap();
        let out = emphasize(&img, &dict, 0.01, 3, 100).unwrap();
        assert_eq!(out.values(), img.values());

        let zero = UnitImage::new(6, vec![0.0; 36]).unwrap();
        let out = emphasize(&zero, &dict, 0.01, 3, 100).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn emphasize_matches_patchwise_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let side = 8usize;
        let img = UnitImage::new(
            side,
            (0..side * side).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let train: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..16).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let (dict, _) = learn_dictionary(&train, 6, 0.05, 8, 60, 41).unwrap();
        let lambda = 0.05;
        let stride = 4usize;
        let iters = 80usize;
        let out = emphasize(&img, &dict, lambda, stride, iters).unwrap();

        // Independent recomputation of the reconstruction mask.
        let patches = extract_patches(&img, 4, stride).unwrap();
        let mut recon = vec![0.0; side * side];
        let mut hits = vec![0u32; side * side];
        let per_axis = (side - 4) / stride + 1;
        for (idx, patch) in patches.iter().enumerate() {
            let code = sparse_code(patch, &dict, lambda, iters).unwrap();
            let r = dict.reconstruct(&code.coefficients);
            let (py, px) = (idx / per_axis, idx % per_axis);
            for dy in 0..4 {
                for dx in 0..4 {
                    let at = (py * stride + dy) * side + px * stride + dx;
                    recon[at] += r[dy * 4 + dx];
                    hits[at] += 1;
                }
            }
        }
        let covered: Vec<f64> = recon
            .iter()
            .zip(&hits)
            .filter(|(_, &h)| h > 0)
            .map(|(r, &h)| r / h as f64)
            .collect();
        let lo = covered.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = covered.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..side * side {
            let expected = if hits[i] == 0 || hi - lo <= 0.0 {
                img.values()[i]
            } else {
                img.values()[i] * (((recon[i] / hits[i] as f64) - lo) / (hi - lo)).clamp(0.0, 1.0)
            };
            assert!(
                (out.values()[i] - expected).abs() < 1e-12,
                "pixel {i}: {} vs {expected}",
                out.values()[i]
            );
        }
        // Bounded by the original image.
        for (o, v) in out.values().iter().zip(img.values()) {
            assert!(*o <= v + 1e-15);
        }
        assert_ne!(out.values(), img.values(), "emphasis should alter a random image");
    }
}
