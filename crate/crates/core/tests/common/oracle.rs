//! Straightforward dense re-implementations used as references.

use super::DiffusionFixture;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone)]
pub struct DenseDiffusion {
    pub anchors: Vec<f64>,
    pub semantic: Vec<f64>,
    /// (frontier, accumulated weights) after each round.
    pub rounds: Vec<(Vec<f64>, Vec<f64>)>,
    pub weights: Vec<f64>,
}

pub fn dense_diffusion(f: &DiffusionFixture) -> DenseDiffusion {
    let v = f.h_str.len();
    let s = f.sentence_sims.len();
    let k = f.h_sem.first().map_or(0, Vec::len);
    let cfg = &f.cfg;

    let probes: Vec<&Vec<f64>> = if f.query_entities.is_empty() {
        vec![&f.query_vector]
    } else {
        f.query_entities.iter().collect()
    };
    let mut anchors = vec![0.0f64; v];
    for probe in probes {
        let mut ranked: Vec<(usize, f64)> = f
            .entity_vectors
            .iter()
            .enumerate()
            .map(|(i, e)| (i, cos(probe, e)))
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for &(i, c) in ranked.iter().take(cfg.anchors_per_entity) {
            anchors[i] = anchors[i].max(c.max(0.0));
        }
    }

    // gamma * H (H^T a0)
    let mut per_cluster = vec![0.0; k];
    for c in 0..k {
        for i in 0..v {
            per_cluster[c] += f.h_sem[i][c] * anchors[i];
        }
    }
    let semantic: Vec<f64> = (0..v)
        .map(|i| cfg.gamma * (0..k).map(|c| f.h_sem[i][c] * per_cluster[c]).sum::<f64>())
        .collect();

    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| {
        f.sentence_sims[b]
            .partial_cmp(&f.sentence_sims[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut gate = vec![0.0; s];
    for &j in order.iter().take(cfg.gated_sentences) {
        gate[j] = f.sentence_sims[j].max(0.0);
    }

    let mut frontier: Vec<f64> = anchors.iter().zip(&semantic).map(|(a, b)| a + b).collect();
    let mut weights = frontier.clone();
    let mut rounds = Vec::new();
    for _ in 0..cfg.max_iterations {
        if frontier.iter().all(|&x| x == 0.0) {
            break;
        }
        let mut sentence = vec![0.0; s];
        for j in 0..s {
            for i in 0..v {
                sentence[j] += f.h_str[i][j] * frontier[i];
            }
        }
        let mut next = vec![0.0; v];
        for i in 0..v {
            for j in 0..s {
                next[i] += f.h_str[i][j] * gate[j] * sentence[j];
            }
        }
        for x in next.iter_mut() {
            if *x <= cfg.epsilon {
                *x = 0.0;
            }
        }
        for (w, x) in weights.iter_mut().zip(&next) {
            *w += x;
        }
        frontier = next;
        rounds.push((frontier.clone(), weights.clone()));
    }
    DenseDiffusion {
        anchors,
        semantic,
        rounds,
        weights,
    }
}

/// Solves `(I - (1 - alpha) M) r = alpha r0` by Gaussian elimination with
/// partial pivoting.
pub fn ppr_exact(m: &[Vec<f64>], restart: &[f64], alpha: f64) -> Vec<f64> {
    let n = restart.len();
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n)
                .map(|j| f64::from(u8::from(i == j)) - (1.0 - alpha) * m[i][j])
                .collect();
            row.push(alpha * restart[i]);
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&x, &y| a[x][c].abs().partial_cmp(&a[y][c].abs()).unwrap())
            .unwrap();
        a.swap(c, p);
        let pivot = a[c][c];
        for j in c..=n {
            a[c][j] /= pivot;
        }
        for r in 0..n {
            if r != c && a[r][c] != 0.0 {
                let factor = a[r][c];
                for j in c..=n {
                    a[r][j] -= factor * a[c][j];
                }
            }
        }
    }
    a.iter().map(|row| row[n]).collect()
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Independent pass over a passage-level scoring problem: cosine of the
/// question embedding with each passage embedding, for ranking sanity checks.
pub fn dense_ranking(query: &[f64], passages: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<(usize, f64)> = passages.iter().map(|p| dot(query, p)).enumerate().collect();
    order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    order.into_iter().map(|p| p.0).collect()
}

#[derive(Debug, Clone)]
pub struct DensePipeline {
    pub combined: Vec<f64>,
    pub ppr: Vec<f64>,
    /// Passage ids ordered by walk score, combined score, then id.
    pub ranking: Vec<usize>,
}

/// Passage scoring and random-walk re-ranking computed with dense matrices
/// on top of [`dense_diffusion`].
pub fn dense_pipeline(
    f: &DiffusionFixture,
    passage_vectors: &[Vec<f64>],
    passage_entities: &[Vec<usize>],
    lambda1: f64,
    lambda2: f64,
    alpha: f64,
) -> DensePipeline {
    let d = dense_diffusion(f);
    let v = f.h_str.len();
    let k = f.h_sem.first().map_or(0, Vec::len);
    let p = passage_vectors.len();

    let topic: Vec<f64> = (0..k)
        .map(|c| {
            (0..v)
                .filter(|&i| f.h_sem[i][c] != 0.0)
                .map(|i| d.semantic[i])
                .sum()
        })
        .collect();
    let combined: Vec<f64> = (0..p)
        .map(|doc| {
            let ents = &passage_entities[doc];
            let global = dot(&f.query_vector, &passage_vectors[doc]);
            let evidence: f64 = ents.iter().map(|&e| (1.0 + d.weights[e]).ln()).sum();
            let touched: Vec<usize> = (0..k)
                .filter(|&c| ents.iter().any(|&e| f.h_sem[e][c] != 0.0))
                .collect();
            let reward = (1.0 + touched.iter().map(|&c| topic[c]).sum::<f64>()).ln();
            global + lambda1 * evidence + lambda2 * reward
        })
        .collect();

    let n = v + p;
    let mut adj = vec![vec![0.0; n]; n];
    for (doc, ents) in passage_entities.iter().enumerate() {
        for &e in ents {
            adj[e][v + doc] = 1.0;
            adj[v + doc][e] = 1.0;
        }
    }
    for i in 0..v {
        for j in 0..v {
            if i != j {
                adj[i][j] = (0..k).map(|c| f.h_sem[i][c] * f.h_sem[j][c]).sum();
            }
        }
    }
    let mut restart = vec![0.0; n];
    let positive: Vec<f64> = combined.iter().map(|c| c.max(0.0)).collect();
    let total: f64 = positive.iter().sum();
    for doc in 0..p {
        restart[v + doc] = if total > 0.0 {
            positive[doc] / total
        } else {
            1.0 / p as f64
        };
    }
    let mut m = vec![vec![0.0; n]; n];
    for j in 0..n {
        let deg: f64 = (0..n).map(|i| adj[i][j]).sum();
        for i in 0..n {
            m[i][j] = if deg > 0.0 {
                adj[i][j] / deg
            } else {
                restart[i]
            };
        }
    }
    let r = ppr_exact(&m, &restart, alpha);
    let ppr: Vec<f64> = r[v..].to_vec();
    let mut ranking: Vec<usize> = (0..p).collect();
    ranking.sort_by(|&a, &b| {
        ppr[b]
            .partial_cmp(&ppr[a])
            .unwrap()
            .then(combined[b].partial_cmp(&combined[a]).unwrap())
            .then(a.cmp(&b))
    });
    DensePipeline {
        combined,
        ppr,
        ranking,
    }
}
