use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CaptionRecord;
use crate::concepts::ConceptParser;
use crate::error::{Error, Result};

/// Replacement for a caption that lost every concept mention.
pub const EMPTY_CAPTION: &str = "a photo.";

/// Deletes each noun-phrase mention independently with probability
/// `drop_prob`.
///
/// Surviving phrases are rejoined with " and " between the text before the
/// first phrase and the text after the last one, so "there is a cow and a
/// tree." keeps its frame. Captions with nothing dropped are returned
/// verbatim; captions with nothing left become [`EMPTY_CAPTION`]. Image ids,
/// order and the other fields are preserved.
pub fn degrade_captions(
    records: &[CaptionRecord],
    parser: &ConceptParser,
    drop_prob: f64,
    seed: u64,
) -> Result<Vec<CaptionRecord>> {
    if !(0.0..=1.0).contains(&drop_prob) {
        return Err(Error::Parameter(format!("drop_prob must be in [0, 1], got {drop_prob}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let nps = parser.noun_phrases(&r.caption);
        let keep: Vec<bool> = nps.iter().map(|_| rng.random::<f64>() >= drop_prob).collect();
        let mut rec = r.clone();
        if keep.iter().all(|&k| k) {
            out.push(rec);
            continue;
        }
        let chars: Vec<char> = r.caption.chars().collect();
        let text = |a: usize, b: usize| chars[a..b].iter().collect::<String>();
        let kept: Vec<String> = nps
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(np, _)| text(np.char_span.0, np.char_span.1))
            .collect();
        rec.caption = if kept.is_empty() {
            EMPTY_CAPTION.to_owned()
        } else {
            let prefix = text(0, nps[0].char_span.0);
            let suffix = text(nps[nps.len() - 1].char_span.1, chars.len());
            format!("{prefix}{}{suffix}", kept.join(" and "))
        };
        out.push(rec);
    }
    Ok(out)
}
