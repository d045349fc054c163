use rand::seq::index::sample;
use rand::Rng as _;

use super::{
    Candidate, Click, Corpus, GenConfig, ImpressionSession, NewsArticle, NewsId, UserId,
    UserRecord,
};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams, Rng};

const MAX_CLICK_RETRIES: usize = 16;
const HISTORY_DAYS: i32 = 7;

/// Hidden per-user ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct UserProfile {
    pub attribute: usize,
    pub personal_topics: Vec<usize>,
    /// Topic interest distribution; sums to one.
    pub interest: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClickModel {
    pub temperature: f64,
    pub click_bias: f64,
}

impl ClickModel {
    fn logit(&self, affinity: f64, best: f64) -> f64 {
        (affinity - best) / self.temperature + self.click_bias
    }
}

/// Preference of attribute class `class` over topics. Class `c` favours the
/// topics `t` with `t % num_classes == c`; `skew` controls how strongly.
pub fn class_topic_preference(class: usize, num_classes: usize, num_topics: usize, skew: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..num_topics)
        .map(|t| if t % num_classes == class { 1.0 } else { 1.0 - skew })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Independent Bernoulli click draws with no minimum-click rule. Candidates
/// with zero affinity are never clicked.
pub fn draw_clicks(affinities: &[f64], model: &ClickModel, rng: &mut Rng) -> Vec<u8> {
    let best = affinities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    affinities
        .iter()
        .map(|&a| {
            let p = if a > 0.0 { sigmoid(model.logit(a, best)) } else { 0.0 };
            u8::from(rng.gen::<f64>() < p)
        })
        .collect()
}

/// Simulate one impression. Clicks are redrawn until at least one occurs;
/// past the retry budget the best-affinity candidate is clicked. A session
/// where every candidate was clicked has its lowest-affinity click removed so
/// that training sessions always carry a negative.
pub fn simulate_session(
    user_id: UserId,
    profile: &UserProfile,
    day: i32,
    candidates: &[&NewsArticle],
    model: &ClickModel,
    rng: &mut Rng,
) -> Result<ImpressionSession> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("session has no candidates".into()));
    }
    let affinities: Vec<f64> = candidates
        .iter()
        .map(|n| profile.interest[n.topic])
        .collect();

    let mut labels = draw_clicks(&affinities, model, rng);
    let mut retries = 0;
    while !labels.contains(&1) && retries < MAX_CLICK_RETRIES {
        labels = draw_clicks(&affinities, model, rng);
        retries += 1;
    }
    if !labels.contains(&1) {
        labels[argmax(&affinities)] = 1;
    }
    if labels.len() >= 2 && labels.iter().all(|&l| l == 1) {
        labels[argmin(&affinities)] = 0;
    }

    Ok(ImpressionSession {
        user_id,
        day,
        candidates: candidates
            .iter()
            .zip(labels)
            .map(|(n, label)| Candidate {
                news_id: n.id,
                label,
            })
            .collect(),
    })
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

fn generate_news(config: &GenConfig) -> Vec<NewsArticle> {
    let mut rng = stream_rng(config.seed, streams::NEWS);
    let (lo, hi) = config.title_len_range;
    (0..config.num_news)
        .map(|i| {
            let topic = rng.gen_range(0..config.num_topics);
            let len = rng.gen_range(lo..=hi);
            let tokens = (0..len)
                .map(|_| {
                    if rng.gen::<f64>() < config.topic_token_prob {
                        format!("t{topic}w{}", rng.gen_range(0..config.vocab_size_per_topic))
                    } else {
                        format!("s{}", rng.gen_range(0..config.shared_vocab_size))
                    }
                })
                .collect();
            NewsArticle {
                id: NewsId(i as u32),
                tokens,
                topic,
            }
        })
        .collect()
}

fn draw_profile(config: &GenConfig, rng: &mut Rng) -> UserProfile {
    let attribute = usize::from(rng.gen::<f64>() < config.class_prior);
    let personal_topics = sample(rng, config.num_topics, config.personal_interests).into_vec();
    let class_pref = class_topic_preference(attribute, 2, config.num_topics, config.class_skew);
    let personal_weight = 1.0 / config.personal_interests as f64;
    let interest = (0..config.num_topics)
        .map(|t| {
            let personal = if personal_topics.contains(&t) {
                personal_weight
            } else {
                0.0
            };
            config.bias_strength * class_pref[t] + (1.0 - config.bias_strength) * personal
        })
        .collect();
    UserProfile {
        attribute,
        personal_topics,
        interest,
    }
}

fn draw_candidates<'a>(news: &'a [NewsArticle], count: usize, rng: &mut Rng) -> Vec<&'a NewsArticle> {
    sample(rng, news.len(), count)
        .into_iter()
        .map(|i| &news[i])
        .collect()
}

/// Generate the full synthetic corpus. Each user draws from its own stream,
/// so the output does not depend on the order users are processed in.
pub fn generate_corpus(config: &GenConfig) -> Result<Corpus> {
    config.validate()?;
    let news = generate_news(config);
    let model = ClickModel {
        temperature: config.click_temperature,
        click_bias: config.click_bias,
    };

    let mut users = Vec::with_capacity(config.num_users);
    let mut profiles = Vec::with_capacity(config.num_users);
    let mut impressions = Vec::with_capacity(config.num_users * config.sessions_per_user);

    for u in 0..config.num_users {
        let user_id = UserId(u as u32);
        let mut rng = stream_rng(config.seed, streams::USER_BASE + u as u64);
        let profile = draw_profile(config, &mut rng);
        let labeled = rng.gen::<f64>() < config.labeled_fraction;

        // Browsing history from a warm-up week preceding the log.
        let mut history = Vec::with_capacity(config.history_len);
        let mut warmup = 0usize;
        while history.len() < config.history_len && warmup < 20 * config.history_len.max(1) {
            let day = -HISTORY_DAYS + (warmup as i32 % HISTORY_DAYS);
            let candidates = draw_candidates(&news, config.candidates_per_session, &mut rng);
            let session = simulate_session(user_id, &profile, day, &candidates, &model, &mut rng)?;
            history.extend(
                session
                    .candidates
                    .iter()
                    .filter(|c| c.label == 1)
                    .map(|c| Click {
                        news_id: c.news_id,
                        day,
                    }),
            );
            warmup += 1;
        }
        history.truncate(config.history_len);
        history.sort_by_key(|c| c.day);

        let mut days: Vec<i32> = (0..config.sessions_per_user)
            .map(|_| rng.gen_range(0..config.days as i32))
            .collect();
        days.sort_unstable();
        for day in days {
            let candidates = draw_candidates(&news, config.candidates_per_session, &mut rng);
            impressions.push(simulate_session(
                user_id, &profile, day, &candidates, &model, &mut rng,
            )?);
        }

        users.push(UserRecord {
            id: user_id,
            attribute: labeled.then_some(profile.attribute),
            clicks: history,
        });
        profiles.push(profile);
    }

    Ok(Corpus {
        news,
        users,
        impressions,
        profiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> GenConfig {
        GenConfig {
            num_users: 200,
            num_news: 400,
            sessions_per_user: 4,
            seed: 11,
            ..GenConfig::default()
        }
    }

    #[test]
    fn rejects_degenerate_configs() {
        let mut c = small_config();
        c.num_topics = 1;
        assert!(generate_corpus(&c).is_err());
        let mut c = small_config();
        c.candidates_per_session = 1;
        assert!(generate_corpus(&c).is_err());
        let mut c = small_config();
        c.bias_strength = 1.5;
        assert!(generate_corpus(&c).is_err());
        let mut c = small_config();
        c.title_len_range = (9, 3);
        assert!(generate_corpus(&c).is_err());
    }

    #[test]
    fn deterministic_for_fixed_config() {
        let a = generate_corpus(&small_config()).unwrap();
        let b = generate_corpus(&small_config()).unwrap();
        assert_eq!(a.news, b.news);
        assert_eq!(a.users, b.users);
        assert_eq!(a.impressions, b.impressions);
    }

    #[test]
    fn full_bias_with_disjoint_classes_only_clicks_class_topics() {
        let config = GenConfig {
            bias_strength: 1.0,
            class_skew: 1.0,
            ..small_config()
        };
        let corpus = generate_corpus(&config).unwrap();
        for session in &corpus.impressions {
            let z = corpus.profiles[session.user_id.index()].attribute;
            for c in session.candidates.iter().filter(|c| c.label == 1) {
                // The forced click may land outside the class set only if no
                // class topic was on display.
                let topic = corpus.news[c.news_id.index()].topic;
                let any_class_topic = session
                    .candidates
                    .iter()
                    .any(|x| corpus.news[x.news_id.index()].topic % 2 == z);
                if any_class_topic {
                    assert_eq!(topic % 2, z);
                }
            }
        }
    }

    #[test]
    fn every_session_has_click_and_non_click() {
        let corpus = generate_corpus(&small_config()).unwrap();
        for s in &corpus.impressions {
            assert!(s.num_clicked() >= 1);
            assert!(s.num_non_clicked() >= 1);
        }
    }

    #[test]
    fn history_is_time_ordered_and_precedes_log() {
        let corpus = generate_corpus(&small_config()).unwrap();
        for user in &corpus.users {
            assert!(user.clicks.windows(2).all(|w| w[0].day <= w[1].day));
            assert!(user.clicks.iter().all(|c| c.day < 0));
        }
    }

    #[test]
    fn zero_candidates_is_an_error() {
        let profile = UserProfile {
            attribute: 0,
            personal_topics: vec![0],
            interest: vec![0.5, 0.5],
        };
        let model = ClickModel {
            temperature: 1.0,
            click_bias: 0.0,
        };
        let mut rng = stream_rng(0, 0);
        assert!(simulate_session(UserId(0), &profile, 0, &[], &model, &mut rng).is_err());
    }

    #[test]
    fn vanishing_temperature_clicks_exactly_the_argmax() {
        let profile = UserProfile {
            attribute: 0,
            personal_topics: vec![2],
            interest: vec![0.1, 0.2, 0.6, 0.1],
        };
        let news: Vec<NewsArticle> = (0..8)
            .map(|i| NewsArticle {
                id: NewsId(i),
                tokens: vec!["x".into()],
                topic: (i % 4) as usize,
            })
            .collect();
        // Only one candidate of topic 2.
        let candidates: Vec<&NewsArticle> = news.iter().filter(|n| n.id.0 != 6).collect();
        let model = ClickModel {
            temperature: 1e-12,
            click_bias: 0.0,
        };
        let mut rng = stream_rng(3, 0);
        for _ in 0..200 {
            let s = simulate_session(UserId(0), &profile, 0, &candidates, &model, &mut rng).unwrap();
            let clicked: Vec<NewsId> = s
                .candidates
                .iter()
                .filter(|c| c.label == 1)
                .map(|c| c.news_id)
                .collect();
            assert_eq!(clicked, vec![NewsId(2)]);
        }
    }

    #[test]
    fn uniform_affinity_click_rate_matches_base_rate() {
        let model = ClickModel {
            temperature: 0.1,
            click_bias: -1.5,
        };
        let base_rate = sigmoid(-1.5);
        let affinities = vec![0.25; 10];
        let mut rng = stream_rng(5, 0);
        let sessions = 20_000;
        let total: usize = (0..sessions)
            .map(|_| {
                draw_clicks(&affinities, &model, &mut rng)
                    .iter()
                    .map(|&l| l as usize)
                    .sum::<usize>()
            })
            .sum();
        let mean = total as f64 / sessions as f64;
        let expected = 10.0 * base_rate;
        // Binomial(10, p) per session; 4 standard errors.
        let se = (10.0 * base_rate * (1.0 - base_rate) / sessions as f64).sqrt();
        assert!((mean - expected).abs() < 4.0 * se, "{mean} vs {expected}");
    }

    #[test]
    fn forced_click_rule_matches_conditional_expectation() {
        // With the minimum-one-click rule the mean count is n p / (1 - (1-p)^n)
        // (the retry budget makes the forced fallback negligible here).
        let model = ClickModel {
            temperature: 0.1,
            click_bias: -2.0,
        };
        let p = sigmoid(-2.0);
        let n = 6;
        let profile = UserProfile {
            attribute: 0,
            personal_topics: vec![0],
            interest: vec![1.0],
        };
        let news: Vec<NewsArticle> = (0..n)
            .map(|i| NewsArticle {
                id: NewsId(i as u32),
                tokens: vec![],
                topic: 0,
            })
            .collect();
        let candidates: Vec<&NewsArticle> = news.iter().collect();
        let mut rng = stream_rng(9, 0);
        let sessions = 20_000;
        let mut total = 0usize;
        for _ in 0..sessions {
            total += simulate_session(UserId(0), &profile, 0, &candidates, &model, &mut rng)
                .unwrap()
                .num_clicked();
        }
        let mean = total as f64 / sessions as f64;
        let expected = n as f64 * p / (1.0 - (1.0 - p).powi(n as i32));
        assert!((mean - expected).abs() < 0.03, "{mean} vs {expected}");
    }

    #[test]
    fn zero_bias_makes_clicks_independent_of_attribute() {
        let config = GenConfig {
            num_users: 600,
            bias_strength: 0.0,
            ..small_config()
        };
        let corpus = generate_corpus(&config).unwrap();
        for p in &corpus.profiles {
            // Interest depends only on personal topics.
            let personal = 1.0 / config.personal_interests as f64;
            for (t, &w) in p.interest.iter().enumerate() {
                let expect = if p.personal_topics.contains(&t) { personal } else { 0.0 };
                assert!((w - expect).abs() < 1e-12);
            }
        }
        // Pooled clicked-topic distributions of the two classes agree.
        let mut hist = [[0f64; 10]; 2];
        for s in &corpus.impressions {
            let z = corpus.profiles[s.user_id.index()].attribute;
            for c in s.candidates.iter().filter(|c| c.label == 1) {
                hist[z][corpus.news[c.news_id.index()].topic] += 1.0;
            }
        }
        let norm = |h: &[f64; 10]| {
            let s: f64 = h.iter().sum();
            h.map(|v| v / s)
        };
        let (a, b) = (norm(&hist[0]), norm(&hist[1]));
        let tv: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.08, "total variation {tv}");
    }

    #[test]
    fn default_statistics_are_calibrated() {
        let corpus = generate_corpus(&GenConfig::default()).unwrap();
        assert_eq!(corpus.users.len(), 2_000);
        assert_eq!(corpus.news.len(), 5_000);
        let within = |value: f64, target: f64| (value - target).abs() <= 0.1 * target;
        assert!(within(corpus.avg_title_len(), 11.0), "{}", corpus.avg_title_len());
        assert!(within(corpus.impressions_per_user(), 36.0));
        // 503,698 clicks over 360,428 impressions.
        let cpi = corpus.clicks_per_impression();
        assert!(within(cpi, 503_698.0 / 360_428.0), "clicks/impression {cpi}");
        let labeled = corpus.users.iter().filter(|u| u.attribute.is_some()).count();
        assert!(within(labeled as f64, 0.4228 * 2_000.0), "labeled {labeled}");
    }
}
