//! Stimulus retrieval: rank candidate embeddings by cosine similarity to
//! each decoded query and report top-k accuracies.

use crate::error::{CoreError, Result};
use crate::tensor::{cosine, Mat};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RetrievalReport {
    pub n_queries: usize,
    pub n_candidates: usize,
    /// (k, accuracy in [0,1]) pairs.
    pub top_k: Vec<(usize, f64)>,
    /// Rank of the true candidate per query (0 = best).
    pub ranks: Vec<usize>,
}

/// Rank of each query's true candidate; ties resolve by candidate index.
pub fn retrieval(
    queries: &Mat,
    candidates: &Mat,
    true_index: &[usize],
    k_list: &[usize],
) -> Result<RetrievalReport> {
    if queries.rows == 0 || candidates.rows == 0 {
        return Err(CoreError::invalid("retrieval: empty queries or candidates"));
    }
    if queries.cols != candidates.cols {
        return Err(CoreError::shape(
            "retrieval dims",
            candidates.cols.to_string(),
            queries.cols.to_string(),
        ));
    }
    if true_index.len() != queries.rows {
        return Err(CoreError::shape(
            "retrieval labels",
            queries.rows.to_string(),
            true_index.len().to_string(),
        ));
    }
    if let Some(&bad) = true_index.iter().find(|&&t| t >= candidates.rows) {
        return Err(CoreError::invalid(format!(
            "retrieval: true index {bad} out of {} candidates",
            candidates.rows
        )));
    }

    let mut ranks = Vec::with_capacity(queries.rows);
    for q in 0..queries.rows {
        let query = queries.row(q);
        let truth = true_index[q];
        let true_sim = cosine(query, candidates.row(truth));
        // Rank = number of candidates strictly better, plus earlier-indexed ties.
        let mut rank = 0usize;
        for c in 0..candidates.rows {
            if c == truth {
                continue;
            }
            let sim = cosine(query, candidates.row(c));
            if sim > true_sim || (sim == true_sim && c < truth) {
                rank += 1;
            }
        }
        ranks.push(rank);
    }

    let top_k = k_list
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|&&r| r < k).count();
            (k, hits as f64 / ranks.len() as f64)
        })
        .collect();

    Ok(RetrievalReport {
        n_queries: queries.rows,
        n_candidates: candidates.rows,
        top_k,
        ranks,
    })
}
