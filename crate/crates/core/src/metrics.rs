//! Bag-level ranking metrics (AUROC, F1), method ranking across result
//! tables, and per-bag attention-map export (CSV plus PGM heatmaps).

use std::fs;
use std::path::Path;

use crate::data::Bag;
use crate::error::{Error, Result};
use crate::model::MilModel;

/// 1-based ranks of `values` in ascending order; ties share the average of
/// the ranks they span.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share rank mean of (i+1)..=(j+1)
        let shared = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

fn check_scored_labels(op: &'static str, scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            op,
            format!("{} scores vs {} labels", scores.len(), labels.len()),
        ));
    }
    if scores.is_empty() {
        return Err(Error::domain(op, "empty input"));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite(op));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::domain(op, "labels must be 0 or 1"));
    }
    Ok(())
}

/// Rank-based (Mann-Whitney) AUROC: the probability that a random positive
/// outscores a random negative, with ties counting one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_scored_labels("auroc", scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::domain("auroc", "both classes must be present"));
    }
    let ranks = average_ranks(scores);
    let rank_sum_pos: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// F1 of thresholded predictions (`score >= threshold`); returns 0 when
/// nothing is predicted positive.
pub fn f1(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check_scored_labels("f1", scores, labels)?;
    if !threshold.is_finite() {
        return Err(Error::domain("f1", "threshold must be finite"));
    }
    if labels.iter().all(|&l| l == 0) {
        return Err(Error::domain("f1", "labels contain no positives"));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fng = 0usize;
    for (&s, &l) in scores.iter().zip(labels) {
        let pred = s >= threshold;
        match (pred, l) {
            (true, 1) => tp += 1,
            (true, 0) => fp += 1,
            (false, 1) => fng += 1,
            _ => {}
        }
    }
    if tp + fp == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fng) as f64)
}

/// Mean rank per method over a rectangular table of higher-is-better metric
/// values (rows = methods, columns = metric instances). Rank 1 is best;
/// ties share the average rank.
pub fn rank_methods(table: &[Vec<f64>]) -> Result<Vec<f64>> {
    if table.is_empty() || table[0].is_empty() {
        return Err(Error::domain("rank_methods", "empty table"));
    }
    let cols = table[0].len();
    for (i, row) in table.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::shape(
                "rank_methods",
                format!("row {} has {} columns, expected {}", i, row.len(), cols),
            ));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("rank_methods"));
        }
    }
    let mut sums = vec![0.0; table.len()];
    for c in 0..cols {
        // negate so ascending ranks put the largest value first
        let column: Vec<f64> = table.iter().map(|row| -row[c]).collect();
        for (sum, rank) in sums.iter_mut().zip(average_ranks(&column)) {
            *sum += rank;
        }
    }
    Ok(sums.into_iter().map(|s| s / cols as f64).collect())
}

/// Min-max rescale to [0,1]; a constant input maps to all zeros.
pub fn minmax_normalize(values: &[f64]) -> Vec<f64> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![0.0; values.len()];
    }
    let span = max - min;
    values.iter().map(|&v| (v - min) / span).collect()
}

/// Analytic attention moments for one bag, raw and per-bag normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub bag_id: String,
    pub coords: Vec<i32>,
    pub coord_dim: usize,
    pub mean_raw: Vec<f64>,
    pub var_raw: Vec<f64>,
    pub mean_norm: Vec<f64>,
    pub var_norm: Vec<f64>,
}

/// Builds the attention map from the posterior's analytic moments; the
/// point-mass posterior reports zero variance everywhere.
pub fn attention_map(model: &MilModel, bag: &Bag) -> Result<AttentionMap> {
    let (_, post) = model.posterior_moments(bag)?;
    let var_raw = match post.sigma2 {
        Some(s2) => s2,
        None => vec![0.0; post.mu.len()],
    };
    let mean_norm = minmax_normalize(&post.mu);
    let var_norm = minmax_normalize(&var_raw);
    Ok(AttentionMap {
        bag_id: bag.id.clone(),
        coords: bag.coords.clone(),
        coord_dim: bag.coord_dim,
        mean_raw: post.mu,
        var_raw,
        mean_norm,
        var_norm,
    })
}

impl AttentionMap {
    pub fn n_instances(&self) -> usize {
        self.mean_raw.len()
    }
}

/// Writes one bag's map as CSV with header
/// `instance_index,coord0[,coord1],att_mean_raw,att_var_raw,att_mean_norm,att_var_norm`.
pub fn write_map_csv(map: &AttentionMap, path: &Path) -> Result<()> {
    let mut out = String::new();
    if map.coord_dim == 2 {
        out.push_str("instance_index,coord0,coord1,att_mean_raw,att_var_raw,att_mean_norm,att_var_norm\n");
    } else {
        out.push_str("instance_index,coord0,att_mean_raw,att_var_raw,att_mean_norm,att_var_norm\n");
    }
    for i in 0..map.n_instances() {
        out.push_str(&format!("{}", i));
        for d in 0..map.coord_dim {
            out.push_str(&format!(",{}", map.coords[i * map.coord_dim + d]));
        }
        out.push_str(&format!(
            ",{},{},{},{}\n",
            map.mean_raw[i], map.var_raw[i], map.mean_norm[i], map.var_norm[i]
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a map CSV back; the bag id is taken from the file stem. Values
/// round-trip bit-exactly because the writer emits shortest-round-trip
/// decimal forms.
pub fn read_map_csv(path: &Path) -> Result<AttentionMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty map file", path.display())))?;
    let coord_dim = match header {
        "instance_index,coord0,att_mean_raw,att_var_raw,att_mean_norm,att_var_norm" => 1,
        "instance_index,coord0,coord1,att_mean_raw,att_var_raw,att_mean_norm,att_var_norm" => 2,
        other => {
            return Err(Error::Data(format!(
                "{}: unrecognized map header {:?}",
                path.display(),
                other
            )))
        }
    };
    let bag_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("map")
        .to_string();
    let mut map = AttentionMap {
        bag_id,
        coords: Vec::new(),
        coord_dim,
        mean_raw: Vec::new(),
        var_raw: Vec::new(),
        mean_norm: Vec::new(),
        var_norm: Vec::new(),
    };
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 + coord_dim {
            return Err(Error::Data(format!(
                "{}: line {} has {} fields",
                path.display(),
                lineno + 2,
                fields.len()
            )));
        }
        let idx: usize = fields[0]
            .parse()
            .map_err(|_| Error::Data(format!("{}: bad index on line {}", path.display(), lineno + 2)))?;
        if idx != lineno {
            return Err(Error::Data(format!(
                "{}: indices out of order at line {}",
                path.display(),
                lineno + 2
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Data(format!("{}: bad number {:?}", path.display(), s)))
        };
        for d in 0..coord_dim {
            let c: i32 = fields[1 + d].parse().map_err(|_| {
                Error::Data(format!("{}: bad coordinate on line {}", path.display(), lineno + 2))
            })?;
            map.coords.push(c);
        }
        map.mean_raw.push(parse_f(fields[coord_dim + 1])?);
        map.var_raw.push(parse_f(fields[coord_dim + 2])?);
        map.mean_norm.push(parse_f(fields[coord_dim + 3])?);
        map.var_norm.push(parse_f(fields[coord_dim + 4])?);
    }
    if map.mean_raw.is_empty() {
        return Err(Error::Data(format!("{}: map has no rows", path.display())));
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapMoment {
    Mean,
    Variance,
}

/// Renders the normalized map as a binary 8-bit PGM: one pixel per chain
/// position or grid cell over the coordinate bounding box; cells without an
/// instance stay black.
pub fn render_pgm(map: &AttentionMap, moment: MapMoment) -> Result<Vec<u8>> {
    let values = match moment {
        MapMoment::Mean => &map.mean_norm,
        MapMoment::Variance => &map.var_norm,
    };
    let n = map.n_instances();
    let (width, height, index_of): (usize, usize, Box<dyn Fn(usize) -> usize>) =
        match map.coord_dim {
            1 => {
                let min = *map.coords.iter().min().expect("nonempty");
                let max = *map.coords.iter().max().expect("nonempty");
                let width = (max - min + 1) as usize;
                let coords = map.coords.clone();
                (
                    width,
                    1,
                    Box::new(move |i: usize| (coords[i] - min) as usize),
                )
            }
            2 => {
                let rows: Vec<i32> = (0..n).map(|i| map.coords[2 * i]).collect();
                let cols: Vec<i32> = (0..n).map(|i| map.coords[2 * i + 1]).collect();
                let (rmin, rmax) = (
                    *rows.iter().min().expect("nonempty"),
                    *rows.iter().max().expect("nonempty"),
                );
                let (cmin, cmax) = (
                    *cols.iter().min().expect("nonempty"),
                    *cols.iter().max().expect("nonempty"),
                );
                let width = (cmax - cmin + 1) as usize;
                (
                    width,
                    (rmax - rmin + 1) as usize,
                    Box::new(move |i: usize| {
                        (rows[i] - rmin) as usize * width + (cols[i] - cmin) as usize
                    }),
                )
            }
            other => {
                return Err(Error::domain(
                    "render_pgm",
                    if other == 0 {
                        "coordinate dimension 0"
                    } else {
                        "coordinate dimension above 2"
                    },
                ))
            }
        };
    let mut pixels = vec![0u8; width * height];
    for (i, &v) in values.iter().enumerate() {
        pixels[index_of(i)] = (v * 255.0).round() as u8;
    }
    let mut out = format!("P5\n{} {}\n255\n", width, height).into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

pub fn write_map_pgm(map: &AttentionMap, moment: MapMoment, path: &Path) -> Result<()> {
    let bytes = render_pgm(map, moment)?;
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Mean normalized attention variance, split by whether thresholding the
/// normalized attention mean at 0.5 predicts each instance's label. Groups
/// with no members report `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceDiagnostic {
    pub mispredicted_mean_var: Option<f64>,
    pub correct_mean_var: Option<f64>,
    pub mispredicted_count: usize,
    pub correct_count: usize,
}

pub fn attention_variance_diagnostic(
    maps: &[(AttentionMap, Vec<u8>)],
) -> Result<VarianceDiagnostic> {
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for (map, labels) in maps {
        if labels.len() != map.n_instances() {
            return Err(Error::shape(
                "variance_diagnostic",
                format!(
                    "bag {}: {} labels for {} instances",
                    map.bag_id,
                    labels.len(),
                    map.n_instances()
                ),
            ));
        }
        for i in 0..map.n_instances() {
            let predicted = u8::from(map.mean_norm[i] >= 0.5);
            let correct = usize::from(predicted == labels[i]);
            sums[correct] += map.var_norm[i];
            counts[correct] += 1;
        }
    }
    let mean = |group: usize| {
        if counts[group] == 0 {
            None
        } else {
            Some(sums[group] / counts[group] as f64)
        }
    };
    Ok(VarianceDiagnostic {
        mispredicted_mean_var: mean(0),
        correct_mean_var: mean(1),
        mispredicted_count: counts[0],
        correct_count: counts[1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Geometry, SynthSpec};
    use crate::model::{
        AttentionPosterior, BagTransform, MilModel, ModelVariant, PosteriorKind, TransformerDims,
    };
    use rand::{Rng, SeedableRng};

    #[test]
    fn auroc_reference_cases() {
        assert_eq!(auroc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5, 0.5, 0.5, 0.5], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
    }

    #[test]
    fn auroc_rejects_single_class() {
        assert!(auroc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(auroc(&[0.1, 0.2], &[0, 0]).is_err());
        assert!(auroc(&[], &[]).is_err());
        assert!(auroc(&[f64::NAN, 0.2], &[0, 1]).is_err());
    }

    #[test]
    fn auroc_matches_pair_enumeration_oracle() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(42);
        for _ in 0..200 {
            let n = rng.gen_range(2..40);
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            labels[0] = 0;
            labels[1] = 1;
            // quantized scores force plenty of ties
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 / 5.0).collect();

            let mut wins = 0.0;
            let mut pairs = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if labels[i] == 1 && labels[j] == 0 {
                        pairs += 1.0;
                        if scores[i] > scores[j] {
                            wins += 1.0;
                        } else if scores[i] == scores[j] {
                            wins += 0.5;
                        }
                    }
                }
            }
            let expected = wins / pairs;
            let got = auroc(&scores, &labels).unwrap();
            assert!((got - expected).abs() < 1e-12, "{} vs {}", got, expected);

            // strictly monotone transform preserves ranks exactly
            let transformed: Vec<f64> = scores.iter().map(|&s| (3.0 * s + 1.0).exp()).collect();
            assert_eq!(auroc(&transformed, &labels).unwrap(), got);
        }
    }

    #[test]
    fn auroc_score_negation_flips_without_ties() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.gen_range(4..30);
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            labels[0] = 0;
            labels[1] = 1;
            // distinct scores: jittered index
            let scores: Vec<f64> = (0..n)
                .map(|i| i as f64 + rng.gen_range(0.0..0.5))
                .collect();
            let fwd = auroc(&scores, &labels).unwrap();
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let rev = auroc(&neg, &labels).unwrap();
            assert!((fwd + rev - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn f1_reference_cases() {
        assert_eq!(f1(&[0.9, 0.2], &[1, 0], 0.5).unwrap(), 1.0);
        assert_eq!(f1(&[0.1, 0.2], &[1, 0], 0.5).unwrap(), 0.0);
        // TP=2, FP=1, FN=1
        let scores = [0.9, 0.8, 0.7, 0.1];
        let labels = [1, 1, 0, 1];
        let got = f1(&scores, &labels, 0.5).unwrap();
        assert!((got - 2.0 * 2.0 / (2.0 * 2.0 + 1.0 + 1.0)).abs() < 1e-15);
        assert!(f1(&[0.9, 0.1], &[0, 0], 0.5).is_err());
    }

    #[test]
    fn rank_methods_reference_cases() {
        assert_eq!(rank_methods(&[vec![0.9], vec![0.8]]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(
            rank_methods(&[vec![0.5], vec![0.5]]).unwrap(),
            vec![1.5, 1.5]
        );
        assert_eq!(
            rank_methods(&[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap(),
            vec![1.5, 1.5]
        );
        assert!(rank_methods(&[vec![0.9, 0.1], vec![0.1]]).is_err());
        assert!(rank_methods(&[]).is_err());
    }

    #[test]
    fn rank_sums_are_conserved() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        for _ in 0..50 {
            let methods = rng.gen_range(2..8);
            let cols = rng.gen_range(1..6);
            let table: Vec<Vec<f64>> = (0..methods)
                .map(|_| (0..cols).map(|_| rng.gen_range(0..4) as f64 / 4.0).collect())
                .collect();
            let means = rank_methods(&table).unwrap();
            let total: f64 = means.iter().sum();
            let expected = (methods * (methods + 1)) as f64 / 2.0;
            assert!((total - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn minmax_handles_spans_and_constants() {
        let v = minmax_normalize(&[2.0, 4.0, 3.0]);
        assert_eq!(v, vec![0.0, 1.0, 0.5]);
        assert_eq!(minmax_normalize(&[5.0, 5.0, 5.0]), vec![0.0, 0.0, 0.0]);
    }

    fn tiny_model(posterior: PosteriorKind, geometry: Geometry) -> (MilModel, Bag) {
        let spec = SynthSpec {
            train_bags: 1,
            val_bags: 0,
            test_bags: 0,
            instance_range: (12, 12),
            feature_dim: 4,
            positive_fraction: 1.0,
            region_range: (4, 4),
            mean_negative: 0.0,
            mean_positive: 1.0,
            stddev: 1.0,
            geometry,
        };
        let bag = generate_synthetic(&spec, 3).unwrap().remove(0).1;
        let model = MilModel::init(
            ModelVariant {
                bag_transform: BagTransform::Abmil,
                posterior,
                input_dim: 4,
                embed_dim: 6,
                attention_dim: 3,
                transformer: TransformerDims::default(),
            },
            9,
        )
        .unwrap();
        (model, bag)
    }

    #[test]
    fn dirac_map_has_zero_variance() {
        let (model, bag) = tiny_model(PosteriorKind::DiracDelta, Geometry::Chain);
        let map = attention_map(&model, &bag).unwrap();
        assert!(map.var_raw.iter().all(|&v| v == 0.0));
        assert!(map.var_norm.iter().all(|&v| v == 0.0));
        let span: Vec<f64> = map.mean_norm.clone();
        let min = span.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = span.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(min, 0.0);
        assert_eq!(max, 1.0);
    }

    #[test]
    fn gaussian_map_matches_sampled_moments() {
        let (model, bag) = tiny_model(PosteriorKind::DiagGaussian, Geometry::Chain);
        let map = attention_map(&model, &bag).unwrap();
        let post = AttentionPosterior {
            mu: map.mean_raw.clone(),
            sigma2: Some(map.var_raw.clone()),
        };
        let n = bag.n_instances();
        let s = 100_000usize;
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let mut sum = vec![0.0; n];
        let mut sumsq = vec![0.0; n];
        for _ in 0..s {
            let noise: Vec<f64> = (0..n)
                .map(|_| {
                    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    let u2: f64 = rng.gen_range(0.0..1.0);
                    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                })
                .collect();
            let f = post.sample(&noise).unwrap();
            for i in 0..n {
                sum[i] += f[i];
                sumsq[i] += f[i] * f[i];
            }
        }
        for i in 0..n {
            let emp_mean = sum[i] / s as f64;
            let emp_var = sumsq[i] / s as f64 - emp_mean * emp_mean;
            let se_mean = (map.var_raw[i] / s as f64).sqrt();
            let se_var = map.var_raw[i] * (2.0 / (s as f64 - 1.0)).sqrt();
            assert!(
                (emp_mean - map.mean_raw[i]).abs() < 3.0 * se_mean,
                "instance {} mean off: {} vs {}",
                i,
                emp_mean,
                map.mean_raw[i]
            );
            assert!(
                (emp_var - map.var_raw[i]).abs() < 3.0 * se_var,
                "instance {} variance off: {} vs {}",
                i,
                emp_var,
                map.var_raw[i]
            );
        }
    }

    #[test]
    fn map_csv_roundtrip_is_bit_exact() {
        for geometry in [Geometry::Chain, Geometry::Grid] {
            let (model, bag) = tiny_model(PosteriorKind::DiagGaussian, geometry);
            let map = attention_map(&model, &bag).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join(format!("{}.csv", map.bag_id));
            write_map_csv(&map, &path).unwrap();
            let back = read_map_csv(&path).unwrap();
            assert_eq!(back.coords, map.coords);
            assert_eq!(back.coord_dim, map.coord_dim);
            for (a, b) in [
                (&back.mean_raw, &map.mean_raw),
                (&back.var_raw, &map.var_raw),
                (&back.mean_norm, &map.mean_norm),
                (&back.var_norm, &map.var_norm),
            ] {
                let ab: Vec<u64> = a.iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u64> = b.iter().map(|v| v.to_bits()).collect();
                assert_eq!(ab, bb);
            }
        }
    }

    #[test]
    fn pgm_renders_chain_and_grid() {
        let map = AttentionMap {
            bag_id: "b".into(),
            coords: vec![0, 1, 2, 3],
            coord_dim: 1,
            mean_raw: vec![0.0, 1.0, 2.0, 3.0],
            var_raw: vec![0.0; 4],
            mean_norm: vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0],
            var_norm: vec![0.0; 4],
        };
        let bytes = render_pgm(&map, MapMoment::Mean).unwrap();
        let header = b"P5\n4 1\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0u8, 85, 170, 255]);

        // 2x3 grid, one missing cell stays black
        let grid = AttentionMap {
            bag_id: "g".into(),
            coords: vec![0, 0, 0, 1, 0, 2, 1, 0, 1, 2],
            coord_dim: 2,
            mean_raw: vec![1.0; 5],
            var_raw: vec![0.0; 5],
            mean_norm: vec![1.0, 1.0, 1.0, 1.0, 1.0],
            var_norm: vec![0.0; 5],
        };
        let bytes = render_pgm(&grid, MapMoment::Mean).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[255u8, 255, 255, 255, 0, 255]);
    }

    #[test]
    fn variance_diagnostic_groups_by_correctness() {
        let map = AttentionMap {
            bag_id: "d".into(),
            coords: vec![0, 1, 2, 3],
            coord_dim: 1,
            mean_raw: vec![0.0; 4],
            var_raw: vec![0.0; 4],
            mean_norm: vec![0.9, 0.8, 0.1, 0.2],
            var_norm: vec![0.5, 0.3, 0.2, 0.8],
        };
        // instances 0,1 predicted positive; 2,3 negative
        let labels = vec![1u8, 0, 0, 1];
        let diag = attention_variance_diagnostic(&[(map, labels)]).unwrap();
        // correct: 0 (pos/pos) and 2 (neg/neg); mispredicted: 1 and 3
        assert_eq!(diag.correct_count, 2);
        assert_eq!(diag.mispredicted_count, 2);
        assert!((diag.correct_mean_var.unwrap() - (0.5 + 0.2) / 2.0).abs() < 1e-15);
        assert!((diag.mispredicted_mean_var.unwrap() - (0.3 + 0.8) / 2.0).abs() < 1e-15);

        let all_correct = AttentionMap {
            bag_id: "e".into(),
            coords: vec![0, 1],
            coord_dim: 1,
            mean_raw: vec![0.0; 2],
            var_raw: vec![0.0; 2],
            mean_norm: vec![0.9, 0.1],
            var_norm: vec![0.4, 0.6],
        };
        let diag = attention_variance_diagnostic(&[(all_correct, vec![1u8, 0])]).unwrap();
        assert_eq!(diag.mispredicted_count, 0);
        assert!(diag.mispredicted_mean_var.is_none());
    }
}
