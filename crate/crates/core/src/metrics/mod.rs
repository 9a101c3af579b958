//! Caption evaluation: n-gram metrics, emotion accuracies, holistic blends and
//! the aggregated report.

mod bleu;
mod cider;
mod emotion;
mod holistic;
mod meteor;
mod report;
mod rouge;

pub use bleu::{bleu, ngrams};
pub use cider::{cider, CiderScore};
pub use emotion::{acc_c, acc_sw, EmotionTruth};
pub use holistic::{holistic, sum_score};
pub use meteor::{meteor_lite, MeteorParams};
pub use rouge::{lcs_len, rouge_l, rouge_l_corpus, ROUGE_BETA};
pub use report::{evaluate, MetricReport};
