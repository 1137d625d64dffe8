use super::FusionError;

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Local outlier factor of every point under euclidean distance.
///
/// The k-neighborhood of a point holds every other point no farther than its
/// k-th nearest neighbor, so ties at the boundary are all included. A point
/// whose reach-distances are all zero has infinite local density; ratios of
/// two infinite densities count as 1, which gives co-located points LOF 1.
pub fn lof_scores(points: &[Vec<f32>], k: usize) -> Result<Vec<f64>, FusionError> {
    let n = points.len();
    if k == 0 || n < k + 1 {
        return Err(FusionError::TooFewPoints { points: n, k });
    }
    if let Some(p) = points.iter().find(|p| p.len() != points[0].len()) {
        return Err(FusionError::MisalignedEmbeddings(format!(
            "point of dim {} among dim {}",
            p.len(),
            points[0].len()
        )));
    }
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| euclidean(&points[i], &points[j])).collect())
        .collect();

    let mut k_distance = vec![0.0; n];
    let mut neighbors: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| dist[i][a].total_cmp(&dist[i][b]).then(a.cmp(&b)));
        let kd = dist[i][others[k - 1]];
        k_distance[i] = kd;
        neighbors.push(others.into_iter().filter(|&j| dist[i][j] <= kd).collect());
    }

    let lrd: Vec<f64> = (0..n)
        .map(|i| {
            let total: f64 = neighbors[i]
                .iter()
                .map(|&j| k_distance[j].max(dist[i][j]))
                .sum();
            if total == 0.0 {
                f64::INFINITY
            } else {
                neighbors[i].len() as f64 / total
            }
        })
        .collect();

    Ok((0..n)
        .map(|i| {
            let ratios: f64 = neighbors[i]
                .iter()
                .map(|&j| density_ratio(lrd[j], lrd[i]))
                .sum();
            ratios / neighbors[i].len() as f64
        })
        .collect())
}

fn density_ratio(num: f64, den: f64) -> f64 {
    if num.is_infinite() && den.is_infinite() {
        1.0
    } else {
        num / den
    }
}
