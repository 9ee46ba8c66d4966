//! Probabilistic mining of API usage patterns from client call sequences.
//!
//! Patterns are explained by a generative model in which each client method
//! is an interleaving of pattern occurrences. Each sequence is covered
//! greedily by the most probable occurrences, parameters are fitted with EM,
//! and new patterns are admitted by structural EM when they raise the average
//! log-likelihood. The result is a ranked list of patterns.
//!
//! ```
//! use pamine::corpus::SequenceDatabase;
//! use pamine::driver::{rank, run, MiningConfig};
//!
//! let db = SequenceDatabase::from_sequences(vec![vec!["open", "read", "close"]; 4]);
//! let mined = run(&db, &MiningConfig::default()).unwrap();
//! let ranked = rank(mined.state.patterns(), db.tokens(), Some(5));
//! assert_eq!(ranked[0].pattern, ["open", "read", "close"]);
//! ```

pub mod corpus;
pub mod driver;
pub mod inference;
pub mod learning;
pub mod model;
pub mod output;
pub mod patternfile;
pub mod synth;

pub use corpus::{ClientSequence, Pattern, SequenceDatabase, TokenId, TokenTable};
pub use driver::{MiningConfig, RankedPattern};
pub use learning::LearningState;
pub use model::{Covering, OccurrenceProbabilities, PatternId, PatternSet};
