//! Synthetic users, news, and impression logs with a tunable dependence
//! between a sensitive user attribute and the topics users click.
//!
//! A user's topic interest mixes an attribute-class preference (weight
//! `bias_strength`) with a handful of personal topics drawn independently of
//! the attribute (weight `1 - bias_strength`). Clicks follow a logistic model
//! over topic affinity relative to the best candidate in the session.

mod generate;
mod io;
mod split;
mod vocab;

use serde::{Deserialize, Serialize};

pub use generate::{
    class_topic_preference, draw_clicks, generate_corpus, simulate_session, ClickModel,
    UserProfile,
};
pub use io::{read_corpus, read_jsonl, write_corpus, write_jsonl, CorpusPaths};
pub use split::{split_dataset, test_start_day, DatasetSplit, TEST_TAIL_FRACTION};
pub use vocab::{build_vocab, encode_title, EncodedTitle, Vocab, OOV_INDEX, PAD_INDEX};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NewsId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u32);

impl NewsId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl UserId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One line of the news file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewsArticle {
    pub id: NewsId,
    pub tokens: Vec<String>,
    /// Generator ground truth; never fed to a model.
    pub topic: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Click {
    pub news_id: NewsId,
    pub day: i32,
}

/// One line of the users file. `clicks` is the browsing history that
/// precedes the impression log, oldest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub id: UserId,
    pub attribute: Option<usize>,
    pub clicks: Vec<Click>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub news_id: NewsId,
    pub label: u8,
}

/// One line of the impressions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpressionSession {
    pub user_id: UserId,
    pub day: i32,
    pub candidates: Vec<Candidate>,
}

impl ImpressionSession {
    pub fn num_clicked(&self) -> usize {
        self.candidates.iter().filter(|c| c.label == 1).count()
    }

    pub fn num_non_clicked(&self) -> usize {
        self.candidates.len() - self.num_clicked()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.candidates.iter().map(|c| c.label).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub num_users: usize,
    pub num_news: usize,
    pub num_topics: usize,
    pub vocab_size_per_topic: usize,
    pub shared_vocab_size: usize,
    pub title_len_range: (usize, usize),
    /// Probability that a title token comes from the topic's own vocabulary.
    pub topic_token_prob: f64,
    /// Weight of the attribute-class preference in a user's interest.
    pub bias_strength: f64,
    /// How concentrated each class preference is on its own topic set.
    /// 1 gives disjoint per-class supports, 0 makes the classes identical.
    pub class_skew: f64,
    pub labeled_fraction: f64,
    /// Probability of attribute class 1.
    pub class_prior: f64,
    pub personal_interests: usize,
    pub history_len: usize,
    pub sessions_per_user: usize,
    pub candidates_per_session: usize,
    pub days: usize,
    pub click_temperature: f64,
    /// Logit offset of the best-affinity candidate in a session.
    pub click_bias: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_users: 2_000,
            num_news: 5_000,
            num_topics: 10,
            vocab_size_per_topic: 60,
            shared_vocab_size: 300,
            title_len_range: (7, 15),
            topic_token_prob: 0.6,
            bias_strength: 0.8,
            class_skew: 0.25,
            // 4,228 of 10,000 users labeled; 1,744 of them in the minority class.
            labeled_fraction: 0.4228,
            class_prior: 1_744.0 / 4_228.0,
            personal_interests: 2,
            history_len: 20,
            sessions_per_user: 36,
            candidates_per_session: 29,
            days: 28,
            click_temperature: 0.02,
            click_bias: -1.6,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_users", self.num_users),
            ("num_news", self.num_news),
            ("num_topics", self.num_topics),
            ("vocab_size_per_topic", self.vocab_size_per_topic),
            ("shared_vocab_size", self.shared_vocab_size),
            ("personal_interests", self.personal_interests),
            ("sessions_per_user", self.sessions_per_user),
            ("candidates_per_session", self.candidates_per_session),
            ("days", self.days),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.num_topics < 2 {
            return Err(Error::InvalidConfig("num_topics must be at least 2".into()));
        }
        if self.candidates_per_session < 2 {
            return Err(Error::InvalidConfig(
                "candidates_per_session must be at least 2".into(),
            ));
        }
        if self.candidates_per_session > self.num_news {
            return Err(Error::InvalidConfig(
                "candidates_per_session exceeds num_news".into(),
            ));
        }
        if self.personal_interests > self.num_topics {
            return Err(Error::InvalidConfig(
                "personal_interests exceeds num_topics".into(),
            ));
        }
        let (lo, hi) = self.title_len_range;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidConfig(format!(
                "title_len_range ({lo}, {hi}) must satisfy 1 <= min <= max"
            )));
        }
        let unit = [
            ("bias_strength", self.bias_strength),
            ("class_skew", self.class_skew),
            ("labeled_fraction", self.labeled_fraction),
            ("class_prior", self.class_prior),
            ("topic_token_prob", self.topic_token_prob),
        ];
        for (name, value) in unit {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.click_temperature > 0.0 && self.click_temperature.is_finite()) {
            return Err(Error::InvalidConfig(
                "click_temperature must be positive".into(),
            ));
        }
        if !self.click_bias.is_finite() {
            return Err(Error::InvalidConfig("click_bias must be finite".into()));
        }
        Ok(())
    }
}

/// Everything the generator produces. `profiles` holds the hidden ground
/// truth (true attribute and interests) and is never written to disk.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub news: Vec<NewsArticle>,
    pub users: Vec<UserRecord>,
    pub impressions: Vec<ImpressionSession>,
    pub profiles: Vec<UserProfile>,
}

impl Corpus {
    pub fn avg_title_len(&self) -> f64 {
        let total: usize = self.news.iter().map(|n| n.tokens.len()).sum();
        total as f64 / self.news.len().max(1) as f64
    }

    pub fn impressions_per_user(&self) -> f64 {
        self.impressions.len() as f64 / self.users.len().max(1) as f64
    }

    pub fn clicks_per_impression(&self) -> f64 {
        let clicks: usize = self.impressions.iter().map(|s| s.num_clicked()).sum();
        clicks as f64 / self.impressions.len().max(1) as f64
    }
}
