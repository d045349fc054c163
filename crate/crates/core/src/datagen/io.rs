use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{ImpressionSession, NewsArticle, UserRecord};
use crate::error::{Error, Result};

pub struct CorpusPaths {
    pub news: PathBuf,
    pub users: PathBuf,
    pub impressions: PathBuf,
}

impl CorpusPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            news: dir.join("news.jsonl"),
            users: dir.join("users.jsonl"),
            impressions: dir.join("impressions.jsonl"),
        }
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).expect("records serialize");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(records)
}

pub fn write_corpus(
    paths: &CorpusPaths,
    news: &[NewsArticle],
    users: &[UserRecord],
    impressions: &[ImpressionSession],
) -> Result<()> {
    write_jsonl(&paths.news, news)?;
    write_jsonl(&paths.users, users)?;
    write_jsonl(&paths.impressions, impressions)
}

pub fn read_corpus(
    paths: &CorpusPaths,
) -> Result<(Vec<NewsArticle>, Vec<UserRecord>, Vec<ImpressionSession>)> {
    Ok((
        read_jsonl(&paths.news)?,
        read_jsonl(&paths.users)?,
        read_jsonl(&paths.impressions)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_corpus, GenConfig};

    #[test]
    fn field_names_match_the_file_schema() {
        let corpus = generate_corpus(&GenConfig {
            num_users: 3,
            num_news: 40,
            sessions_per_user: 1,
            history_len: 2,
            labeled_fraction: 0.0,
            ..GenConfig::default()
        })
        .unwrap();
        let news: serde_json::Value = serde_json::to_value(&corpus.news[0]).unwrap();
        assert!(news.get("id").is_some() && news.get("tokens").is_some() && news.get("topic").is_some());
        let user: serde_json::Value = serde_json::to_value(&corpus.users[0]).unwrap();
        assert!(user["attribute"].is_null());
        assert!(user["clicks"][0].get("news_id").is_some());
        assert!(user["clicks"][0].get("day").is_some());
        let imp: serde_json::Value = serde_json::to_value(&corpus.impressions[0]).unwrap();
        assert!(imp.get("user_id").is_some() && imp.get("day").is_some());
        assert!(imp["candidates"][0].get("news_id").is_some());
        assert!(imp["candidates"][0].get("label").is_some());
    }

    #[test]
    fn files_round_trip() {
        let corpus = generate_corpus(&GenConfig {
            num_users: 20,
            num_news: 100,
            sessions_per_user: 2,
            ..GenConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = CorpusPaths::in_dir(dir.path());
        write_corpus(&paths, &corpus.news, &corpus.users, &corpus.impressions).unwrap();
        let (news, users, impressions) = read_corpus(&paths).unwrap();
        assert_eq!(news, corpus.news);
        assert_eq!(users, corpus.users);
        assert_eq!(impressions, corpus.impressions);
    }

    #[test]
    fn missing_file_reports_path() {
        let err = read_jsonl::<NewsArticle>(Path::new("/nonexistent/news.jsonl")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/news.jsonl"));
    }
}
