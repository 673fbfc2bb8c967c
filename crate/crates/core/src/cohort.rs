//! Cohort-based next-phoneme predictions.
//!
//! The word-level prior is renormalised over the cohort of words that share
//! the phonemes heard so far, and the next-phoneme distribution is the prior
//! mass of cohort members continuing with each phoneme. Membership is exact
//! (no confusion smoothing). Within a word the context prior is held fixed.

use rayon::prelude::*;

use crate::cognitive::{Candidate, PriorTable};
use crate::error::{Error, Result};
use crate::features::StimulusTranscript;
use crate::lexicon::{Lexicon, PhonemeInventory};

/// Vocabulary with priors for one token, resolved to phoneme sequences.
#[derive(Debug, Clone)]
pub struct CohortModel<'a> {
    words: Vec<(&'a [usize], f64)>,
    n_phonemes: usize,
}

impl<'a> CohortModel<'a> {
    pub fn new(
        candidates: &[Candidate],
        lex: &'a Lexicon,
        inventory: &PhonemeInventory,
    ) -> Result<Self> {
        let words = candidates
            .iter()
            .map(|c| {
                lex.get(&c.form).map(|p| (p, c.prior)).ok_or_else(|| {
                    Error::InvalidArgument(format!("candidate {:?} is not in the lexicon", c.form))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            words,
            n_phonemes: inventory.len(),
        })
    }

    /// The cohort before any phoneme has been heard: the full vocabulary.
    pub fn onset_state(&self, token_index: usize) -> CohortState {
        let members: Vec<usize> = (0..self.words.len()).collect();
        CohortState::from_members(token_index, Vec::new(), members, self)
    }

    pub fn n_phonemes(&self) -> usize {
        self.n_phonemes
    }

    /// Position-wise marginal over the whole vocabulary, ignoring the prefix.
    fn positional_marginal(&self, position: usize) -> Vec<f64> {
        let mut dist = vec![0.0; self.n_phonemes];
        for (phones, prior) in &self.words {
            if let Some(&p) = phones.get(position) {
                dist[p] += prior;
            }
        }
        let total: f64 = dist.iter().sum();
        if total > 0.0 {
            dist.iter_mut().for_each(|v| *v /= total);
        }
        dist
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortState {
    pub token_index: usize,
    pub prefix: Vec<usize>,
    /// Indices into the model's vocabulary.
    members: Vec<usize>,
    /// Prior renormalised over `members`.
    mass: Vec<f64>,
}

impl CohortState {
    fn from_members(
        token_index: usize,
        prefix: Vec<usize>,
        members: Vec<usize>,
        model: &CohortModel<'_>,
    ) -> Self {
        let total: f64 = members.iter().map(|&m| model.words[m].1).sum();
        let mass = members.iter().map(|&m| model.words[m].1 / total).collect();
        Self {
            token_index,
            prefix,
            members,
            mass,
        }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn renormalized_prior(&self) -> &[f64] {
        &self.mass
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Cohort after hearing `phoneme`; may be empty.
    pub fn advance(&self, phoneme: usize, model: &CohortModel<'_>) -> CohortState {
        let t = self.prefix.len();
        let members: Vec<usize> = self
            .members
            .iter()
            .copied()
            .filter(|&m| model.words[m].0.get(t) == Some(&phoneme))
            .collect();
        let mut prefix = self.prefix.clone();
        prefix.push(phoneme);
        CohortState::from_members(self.token_index, prefix, members, model)
    }
}

/// `P(p_t | prefix, C)` over the whole inventory.
pub fn next_phoneme_dist(state: &CohortState, model: &CohortModel<'_>) -> Result<Vec<f64>> {
    let t = state.prefix.len();
    let mut dist = vec![0.0; model.n_phonemes];
    for (&m, &w) in state.members.iter().zip(&state.mass) {
        if let Some(&p) = model.words[m].0.get(t) {
            dist[p] += w;
        }
    }
    let total: f64 = dist.iter().sum();
    if state.is_empty() || total <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "token {}: no cohort member continues after {} phonemes",
            state.token_index, t
        )));
    }
    dist.iter_mut().for_each(|v| *v /= total);
    Ok(dist)
}

fn surprisal_entropy(dist: &[f64], truth: usize) -> Option<(f64, f64)> {
    let p = *dist.get(truth)?;
    if p <= 0.0 {
        return None;
    }
    let entropy = -dist
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| q * q.log2())
        .sum::<f64>();
    Some((-p.log2(), entropy.max(0.0)))
}

/// Surprisal of the ground-truth next phoneme and entropy of the
/// next-phoneme distribution, both in bits.
pub fn phoneme_surprisal_entropy(
    state: &CohortState,
    model: &CohortModel<'_>,
    next: usize,
) -> Result<(f64, f64)> {
    let dist = next_phoneme_dist(state, model)?;
    surprisal_entropy(&dist, next).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "token {}: ground-truth phoneme {next} has zero probability after {} phonemes",
            state.token_index,
            state.prefix.len()
        ))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeFeatureRow {
    /// 1-based position within the word.
    pub position: usize,
    pub surprisal_bits: f64,
    pub entropy_bits: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenCohortFeatures {
    pub token_index: usize,
    pub rows: Vec<PhonemeFeatureRow>,
    /// The heard phonemes left the cohort (out-of-lexicon pronunciation).
    pub flagged: bool,
}

/// Surprisal/entropy for each phoneme of a heard word.
///
/// If the cohort empties, the remaining positions back off to the
/// vocabulary-wide positional distribution and the token is flagged. A
/// phoneme that is impossible even there is scored against a uniform
/// distribution over the inventory.
pub fn token_features(
    token_index: usize,
    heard: &[usize],
    model: &CohortModel<'_>,
) -> TokenCohortFeatures {
    let mut rows = Vec::with_capacity(heard.len());
    let mut state = Some(model.onset_state(token_index));
    let mut flagged = false;
    for (t, &p) in heard.iter().enumerate() {
        let scored = state
            .as_ref()
            .and_then(|s| next_phoneme_dist(s, model).ok())
            .and_then(|d| surprisal_entropy(&d, p));
        let (surprisal, entropy) = match scored {
            Some(v) => v,
            None => {
                flagged = true;
                state = None;
                surprisal_entropy(&model.positional_marginal(t), p).unwrap_or_else(|| {
                    let n = model.n_phonemes as f64;
                    (n.log2(), n.log2())
                })
            }
        };
        rows.push(PhonemeFeatureRow {
            position: t + 1,
            surprisal_bits: surprisal,
            entropy_bits: entropy,
        });
        state = state.map(|s| s.advance(p, model));
    }
    TokenCohortFeatures {
        token_index,
        rows,
        flagged,
    }
}

/// Cohort features for every word of a transcript, using each token's
/// candidate set as its vocabulary.
pub fn transcript_features(
    transcript: &StimulusTranscript,
    priors: &PriorTable,
    lex: &Lexicon,
    inventory: &PhonemeInventory,
) -> Result<Vec<TokenCohortFeatures>> {
    transcript
        .words()
        .par_iter()
        .map(|w| {
            let cands = priors.get(w.token_index).ok_or_else(|| {
                Error::InvalidArgument(format!("token {}: no prior entry", w.token_index))
            })?;
            let model = CohortModel::new(cands, lex, inventory)?;
            let symbols: Vec<&str> = w.phonemes.iter().map(|p| p.symbol.as_str()).collect();
            let heard = inventory
                .encode(&symbols)
                .map_err(|e| Error::InvalidArgument(format!("token {}: {e}", w.token_index)))?;
            Ok(token_features(w.token_index, &heard, &model))
        })
        .collect()
}

/// CSV with columns `token_index,phoneme_position,surprisal_bits,entropy_bits,flagged`.
pub fn write_features_csv<W: std::io::Write>(features: &[TokenCohortFeatures], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Numerical(format!("csv write: {e}"));
    out.write_record([
        "token_index",
        "phoneme_position",
        "surprisal_bits",
        "entropy_bits",
        "flagged",
    ])
    .map_err(err)?;
    for tok in features {
        for r in &tok.rows {
            out.write_record([
                tok.token_index.to_string(),
                r.position.to_string(),
                format!("{:.9}", r.surprisal_bits),
                format!("{:.9}", r.entropy_bits),
                tok.flagged.to_string(),
            ])
            .map_err(err)?;
        }
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(words: &[(&str, &[&str], f64)]) -> (PhonemeInventory, Lexicon, Vec<Candidate>) {
        let mut symbols: Vec<&str> = words
            .iter()
            .flat_map(|(_, p, _)| p.iter().copied())
            .collect();
        symbols.sort_unstable();
        symbols.dedup();
        let inv = PhonemeInventory::new(symbols).unwrap();
        let lex = Lexicon::new(
            words
                .iter()
                .map(|(f, p, _)| (f.to_string(), inv.encode(p).unwrap())),
            &inv,
        )
        .unwrap();
        let cands = words
            .iter()
            .map(|(f, _, p)| Candidate {
                form: f.to_string(),
                prior: *p,
            })
            .collect();
        (inv, lex, cands)
    }

    #[test]
    fn symmetric_and_weighted_cohorts() {
        let (inv, lex, cands) = setup(&[
            ("cat", &["k", "a", "t"], 0.5),
            ("cab", &["k", "a", "b"], 0.5),
        ]);
        let model = CohortModel::new(&cands, &lex, &inv).unwrap();
        let s = model
            .onset_state(0)
            .advance(inv.index_of("k").unwrap(), &model)
            .advance(inv.index_of("a").unwrap(), &model);
        let d = next_phoneme_dist(&s, &model).unwrap();
        assert_abs_diff_eq!(d[inv.index_of("t").unwrap()], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d[inv.index_of("b").unwrap()], 0.5, epsilon = 1e-15);

        let (inv, lex, cands) = setup(&[
            ("cat", &["k", "a", "t"], 0.9),
            ("cab", &["k", "a", "b"], 0.1),
        ]);
        let model = CohortModel::new(&cands, &lex, &inv).unwrap();
        let s = model
            .onset_state(0)
            .advance(inv.index_of("k").unwrap(), &model);
        let s = s.advance(inv.index_of("a").unwrap(), &model);
        assert_eq!(s.prefix.len(), 2);
        let d = next_phoneme_dist(&s, &model).unwrap();
        assert_abs_diff_eq!(d[inv.index_of("t").unwrap()], 0.9, epsilon = 1e-15);
    }

    #[test]
    fn uniform_and_deterministic_information() {
        let (inv, lex, cands) = setup(&[
            ("a", &["x", "a"], 0.25),
            ("b", &["x", "b"], 0.25),
            ("c", &["x", "c"], 0.25),
            ("d", &["x", "d"], 0.25),
        ]);
        let model = CohortModel::new(&cands, &lex, &inv).unwrap();
        let s = model.onset_state(0);
        let (surp, ent) =
            phoneme_surprisal_entropy(&s, &model, inv.index_of("x").unwrap()).unwrap();
        assert_eq!((surp, ent), (0.0, 0.0));
        let s = s.advance(inv.index_of("x").unwrap(), &model);
        let (surp, ent) =
            phoneme_surprisal_entropy(&s, &model, inv.index_of("c").unwrap()).unwrap();
        assert_abs_diff_eq!(surp, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ent, 2.0, epsilon = 1e-14);
        assert!(phoneme_surprisal_entropy(&s, &model, inv.index_of("x").unwrap()).is_err());
    }

    #[test]
    fn three_way_cohort_by_hand() {
        let (inv, lex, cands) = setup(&[
            ("ab", &["a", "b"], 0.5),
            ("ac", &["a", "c"], 0.3),
            ("ad", &["a", "d"], 0.1),
            ("ed", &["e", "d"], 0.1),
        ]);
        let model = CohortModel::new(&cands, &lex, &inv).unwrap();
        let s = model
            .onset_state(0)
            .advance(inv.index_of("a").unwrap(), &model);
        assert_eq!(s.members().len(), 3);
        let (surp, ent) =
            phoneme_surprisal_entropy(&s, &model, inv.index_of("c").unwrap()).unwrap();
        // Hand enumeration: p = (5/9, 3/9, 1/9).
        let p = [5.0 / 9.0, 3.0 / 9.0, 1.0 / 9.0];
        let want_ent: f64 = -p.iter().map(|q: &f64| q * q.log2()).sum::<f64>();
        assert_abs_diff_eq!(surp, -(3.0f64 / 9.0).log2(), epsilon = 1e-14);
        assert_abs_diff_eq!(ent, want_ent, epsilon = 1e-14);
    }

    #[test]
    fn matches_vocabulary_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let symbols: Vec<String> = (0..6).map(|i| format!("p{i}")).collect();
        let inv = PhonemeInventory::new(symbols).unwrap();
        let mut entries = std::collections::BTreeMap::new();
        while entries.len() < 50 {
            let len = rng.random_range(1..=4);
            let phones: Vec<usize> = (0..len).map(|_| rng.random_range(0..6)).collect();
            entries.insert(format!("w{}", entries.len()), phones);
        }
        let lex = Lexicon::new(entries.clone(), &inv).unwrap();
        let raw: Vec<f64> = (0..50).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let cands: Vec<Candidate> = entries
            .keys()
            .zip(&raw)
            .map(|(f, w)| Candidate {
                form: f.clone(),
                prior: w / total,
            })
            .collect();
        let model = CohortModel::new(&cands, &lex, &inv).unwrap();
        for prefix in [vec![], vec![0], vec![1, 2], vec![3, 3]] {
            let mut s = model.onset_state(0);
            for &p in &prefix {
                s = s.advance(p, &model);
            }
            let mut brute = [0.0; 6];
            for (c, phones) in cands.iter().zip(entries.values()) {
                if phones.len() > prefix.len() && phones[..prefix.len()] == prefix[..] {
                    brute[phones[prefix.len()]] += c.prior;
                }
            }
            let z: f64 = brute.iter().sum();
            if z == 0.0 {
                assert!(next_phoneme_dist(&s, &model).is_err());
                continue;
            }
            let d = next_phoneme_dist(&s, &model).unwrap();
            for i in 0..6 {
                assert_abs_diff_eq!(d[i], brute[i] / z, epsilon = 1e-12);
            }
            // Cohort shrinks monotonically.
            let next = s.advance(0, &model);
            assert!(next.members().iter().all(|m| s.members().contains(m)));
        }
    }

    #[test]
    fn out_of_lexicon_pronunciation_is_flagged() {
        let (inv, lex, cands) = setup(&[("ab", &["a", "b"], 0.6), ("ba", &["b", "a"], 0.4)]);
        let model = CohortModel::new(&cands, &lex, &inv).unwrap();
        let heard = [inv.index_of("a").unwrap(), inv.index_of("a").unwrap()];
        let f = token_features(3, &heard, &model);
        assert!(f.flagged);
        assert_eq!(f.rows.len(), 2);
        // Position 2 backs off to the vocabulary-wide marginal: P(a) = 0.4.
        assert_abs_diff_eq!(f.rows[1].surprisal_bits, -(0.4f64).log2(), epsilon = 1e-14);
        assert!(f
            .rows
            .iter()
            .all(|r| r.surprisal_bits.is_finite() && r.entropy_bits.is_finite()));

        let clean = token_features(
            4,
            &[inv.index_of("a").unwrap(), inv.index_of("b").unwrap()],
            &model,
        );
        assert!(!clean.flagged);
        assert_abs_diff_eq!(
            clean.rows[0].surprisal_bits,
            -(0.6f64).log2(),
            epsilon = 1e-14
        );
        assert_eq!(clean.rows[1].surprisal_bits, 0.0);
    }
}
