//! Conversation data model: posts, threads and labelled datasets.
//!
//! Datasets are ingested from a normalized JSON Lines file, one post per
//! line. Threads are rebuilt from `thread_id` and `parent_id` links and
//! validated on load; everything is immutable afterwards.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("post {post_id} is not part of thread {thread_id}")]
    Lookup { post_id: String, thread_id: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Twitter,
    Reddit,
}

impl Platform {
    pub const ALL: [Platform; 2] = [Platform::Twitter, Platform::Reddit];

    pub fn as_str(self) -> &'static str {
        match self {
            Platform::Twitter => "twitter",
            Platform::Reddit => "reddit",
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// SDQC stance of a post towards the rumour in its thread's source post.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stance {
    Support,
    Deny,
    Query,
    Comment,
}

impl Stance {
    pub const ALL: [Stance; 4] = [Stance::Support, Stance::Deny, Stance::Query, Stance::Comment];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Stance> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stance::Support => "support",
            Stance::Deny => "deny",
            Stance::Query => "query",
            Stance::Comment => "comment",
        }
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Thread-level rumour veracity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Veracity {
    True,
    False,
    Unverified,
}

impl Veracity {
    pub const ALL: [Veracity; 3] = [Veracity::True, Veracity::False, Veracity::Unverified];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Veracity> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Veracity::True => "true",
            Veracity::False => "false",
            Veracity::Unverified => "unverified",
        }
    }
}

impl fmt::Display for Veracity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PostDepth {
    Source,
    DirectReply,
    NestedReply,
}

impl PostDepth {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train, dev or test)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Post {
    pub id: String,
    pub thread_id: String,
    pub parent_id: Option<String>,
    pub platform: Platform,
    pub raw_text: String,
    pub user_verified: bool,
    pub follower_count: u64,
    pub following_count: u64,
    pub has_image: bool,
    pub has_url: bool,
    /// Only ever present for Reddit posts.
    pub upvote_ratio: Option<f64>,
    pub sdqc_label: Option<Stance>,
    pub topic: Option<String>,
}

impl Post {
    pub fn is_source(&self) -> bool {
        self.parent_id.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Thread {
    pub source: Post,
    /// Replies in file order.
    pub replies: Vec<Post>,
    pub veracity_label: Option<Veracity>,
}

impl Thread {
    #[allow(clippy::misnamed_getters)]
    pub fn id(&self) -> &str {
        &self.source.thread_id
    }

    pub fn platform(&self) -> Platform {
        self.source.platform
    }

    pub fn topic(&self) -> Option<&str> {
        self.source.topic.as_deref()
    }

    /// Source first, then replies in file order.
    pub fn posts(&self) -> impl Iterator<Item = &Post> {
        std::iter::once(&self.source).chain(self.replies.iter())
    }

    pub fn len(&self) -> usize {
        1 + self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn post(&self, id: &str) -> Option<&Post> {
        self.posts().find(|p| p.id == id)
    }

    pub fn depth_of(&self, post_id: &str) -> Result<PostDepth, DataError> {
        let post = self.post(post_id).ok_or_else(|| DataError::Lookup {
            post_id: post_id.to_string(),
            thread_id: self.id().to_string(),
        })?;
        Ok(match post.parent_id.as_deref() {
            None => PostDepth::Source,
            Some(parent) if parent == self.source.id => PostDepth::DirectReply,
            Some(_) => PostDepth::NestedReply,
        })
    }
}

pub fn post_depth(post: &Post, thread: &Thread) -> Result<PostDepth, DataError> {
    thread.depth_of(&post.id)
}

/// Diagnostics collected while loading; loading still succeeds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadReport {
    /// Twitter posts whose user metadata was absent and defaulted.
    pub missing_metadata: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub threads: Vec<Thread>,
    pub split: Split,
}

/// Wire form of one JSON Lines record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PostRecord {
    pub id: String,
    pub thread_id: String,
    pub parent_id: Option<String>,
    pub platform: Platform,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_verified: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub follower_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub following_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub has_image: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub has_url: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upvote_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sdqc_label: Option<Stance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub veracity_label: Option<Veracity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
}

impl PostRecord {
    fn from_post(post: &Post, veracity: Option<Veracity>) -> Self {
        PostRecord {
            id: post.id.clone(),
            thread_id: post.thread_id.clone(),
            parent_id: post.parent_id.clone(),
            platform: post.platform,
            text: post.raw_text.clone(),
            user_verified: Some(post.user_verified),
            follower_count: Some(post.follower_count),
            following_count: Some(post.following_count),
            has_image: Some(post.has_image),
            has_url: Some(post.has_url),
            upvote_ratio: post.upvote_ratio,
            sdqc_label: post.sdqc_label,
            veracity_label: veracity,
            topic: post.topic.clone(),
        }
    }

    fn missing_metadata(&self) -> bool {
        self.user_verified.is_none()
            || self.follower_count.is_none()
            || self.following_count.is_none()
    }

    fn into_post(self) -> (Post, Option<Veracity>) {
        let post = Post {
            id: self.id,
            thread_id: self.thread_id,
            parent_id: self.parent_id,
            platform: self.platform,
            raw_text: self.text,
            user_verified: self.user_verified.unwrap_or(false),
            follower_count: self.follower_count.unwrap_or(0),
            following_count: self.following_count.unwrap_or(0),
            has_image: self.has_image.unwrap_or(false),
            has_url: self.has_url.unwrap_or(false),
            upvote_ratio: self.upvote_ratio,
            sdqc_label: self.sdqc_label,
            topic: self.topic,
        };
        (post, self.veracity_label)
    }
}

fn check_record(rec: &PostRecord, line: usize) -> Result<(), DataError> {
    let parse = |message: String| DataError::Parse { line, message };
    if rec.id.is_empty() {
        return Err(parse("empty `id`".into()));
    }
    if rec.thread_id.is_empty() {
        return Err(parse("empty `thread_id`".into()));
    }
    if let Some(r) = rec.upvote_ratio {
        if !(0.0..=1.0).contains(&r) {
            return Err(parse(format!("upvote_ratio {r} outside [0, 1]")));
        }
        if rec.platform != Platform::Reddit {
            return Err(DataError::Integrity(format!(
                "post {} has an upvote_ratio but is not a Reddit post",
                rec.id
            )));
        }
    }
    if rec.veracity_label.is_some() && rec.parent_id.is_some() {
        return Err(DataError::Integrity(format!(
            "reply {} carries a veracity label; only source posts may",
            rec.id
        )));
    }
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>, split: Split) -> Result<Dataset, DataError> {
    load_dataset_with_report(path, split).map(|(d, _)| d)
}

pub fn load_dataset_with_report(
    path: impl AsRef<Path>,
    split: Split,
) -> Result<(Dataset, LoadReport), DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(BufReader::new(file), split).map_err(|e| match e {
        DataError::Io { source, .. } => DataError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

/// Parses JSON Lines from any reader. Blank lines are skipped.
pub fn parse_dataset(reader: impl BufRead, split: Split) -> Result<(Dataset, LoadReport), DataError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| DataError::Io {
            path: String::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PostRecord = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        check_record(&rec, line_no)?;
        records.push(rec);
    }
    Dataset::from_records(records, split)
}

impl Dataset {
    pub fn empty(split: Split) -> Self {
        Dataset {
            threads: Vec::new(),
            split,
        }
    }

    /// Builds a dataset from records, reconstructing and validating threads.
    pub fn from_records(records: Vec<PostRecord>, split: Split) -> Result<(Dataset, LoadReport), DataError> {
        let mut report = LoadReport::default();
        let mut seen = HashSet::new();
        let mut thread_order: Vec<String> = Vec::new();
        let mut by_thread: HashMap<String, Vec<(Post, Option<Veracity>)>> = HashMap::new();
        let mut thread_of: HashMap<String, String> = HashMap::new();

        for rec in records {
            if !seen.insert(rec.id.clone()) {
                return Err(DataError::Integrity(format!("duplicate post id {}", rec.id)));
            }
            if rec.platform == Platform::Twitter && rec.missing_metadata() {
                report.missing_metadata.push(rec.id.clone());
            }
            let (post, veracity) = rec.into_post();
            thread_of.insert(post.id.clone(), post.thread_id.clone());
            let entry = by_thread.entry(post.thread_id.clone()).or_insert_with(|| {
                thread_order.push(post.thread_id.clone());
                Vec::new()
            });
            entry.push((post, veracity));
        }

        let mut threads = Vec::with_capacity(thread_order.len());
        for tid in thread_order {
            let posts = by_thread.remove(&tid).unwrap_or_default();
            threads.push(build_thread(&tid, posts, &thread_of)?);
        }
        Ok((Dataset { threads, split }, report))
    }

    pub fn new(threads: Vec<Thread>, split: Split) -> Result<Dataset, DataError> {
        let records = threads
            .iter()
            .flat_map(|t| {
                t.posts().map(move |p| {
                    PostRecord::from_post(p, if p.is_source() { t.veracity_label } else { None })
                })
            })
            .collect();
        Dataset::from_records(records, split).map(|(d, _)| d)
    }

    /// Concatenates datasets, re-checking id uniqueness across them.
    pub fn merge(parts: &[Dataset], split: Split) -> Result<Dataset, DataError> {
        let threads = parts.iter().flat_map(|d| d.threads.iter().cloned()).collect();
        Dataset::new(threads, split)
    }

    pub fn records(&self) -> Vec<PostRecord> {
        self.threads
            .iter()
            .flat_map(|t| {
                t.posts().map(move |p| {
                    PostRecord::from_post(p, if p.is_source() { t.veracity_label } else { None })
                })
            })
            .collect()
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for rec in self.records() {
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()
    }

    pub fn posts(&self) -> impl Iterator<Item = &Post> {
        self.threads.iter().flat_map(|t| t.posts())
    }

    /// Each post paired with its thread.
    pub fn posts_with_threads(&self) -> impl Iterator<Item = (&Post, &Thread)> {
        self.threads.iter().flat_map(|t| t.posts().map(move |p| (p, t)))
    }

    pub fn num_posts(&self) -> usize {
        self.threads.iter().map(Thread::len).sum()
    }

    pub fn thread(&self, id: &str) -> Option<&Thread> {
        self.threads.iter().find(|t| t.id() == id)
    }

    /// Keeps only the threads whose id satisfies `keep`.
    pub fn filter_threads(&self, mut keep: impl FnMut(&Thread) -> bool, split: Split) -> Dataset {
        Dataset {
            threads: self.threads.iter().filter(|t| keep(t)).cloned().collect(),
            split,
        }
    }
}

fn build_thread(
    tid: &str,
    posts: Vec<(Post, Option<Veracity>)>,
    thread_of: &HashMap<String, String>,
) -> Result<Thread, DataError> {
    let sources: Vec<usize> = posts
        .iter()
        .enumerate()
        .filter(|(_, (p, _))| p.is_source())
        .map(|(i, _)| i)
        .collect();
    if sources.len() != 1 {
        return Err(DataError::Integrity(format!(
            "thread {tid} has {} source posts, expected exactly 1",
            sources.len()
        )));
    }

    let parents: HashMap<&str, Option<&str>> = posts
        .iter()
        .map(|(p, _)| (p.id.as_str(), p.parent_id.as_deref()))
        .collect();
    for (p, _) in &posts {
        let Some(parent) = p.parent_id.as_deref() else {
            continue;
        };
        match thread_of.get(parent) {
            None => {
                return Err(DataError::Integrity(format!(
                    "post {} has dangling parent_id {parent}",
                    p.id
                )))
            }
            Some(other) if other != tid => {
                return Err(DataError::Integrity(format!(
                    "post {} in thread {tid} replies to {parent} from thread {other}",
                    p.id
                )))
            }
            Some(_) => {}
        }
        // The parent chain must end at the source within |thread| steps.
        let mut cur = parent;
        let mut steps = 0;
        while let Some(Some(next)) = parents.get(cur) {
            cur = next;
            steps += 1;
            if steps > posts.len() {
                return Err(DataError::Integrity(format!(
                    "reply chain of post {} in thread {tid} contains a cycle",
                    p.id
                )));
            }
        }
    }

    let mut posts = posts;
    let (source, veracity) = posts.remove(sources[0]);
    let replies = posts.into_iter().map(|(p, _)| p).collect();
    Ok(Thread {
        source,
        replies,
        veracity_label: veracity,
    })
}

/// Labelled instance counts broken down by platform.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    /// Indexed by [`Stance::index`].
    pub stance: BTreeMap<Platform, [usize; 4]>,
    /// Indexed by [`Veracity::index`].
    pub veracity: BTreeMap<Platform, [usize; 3]>,
}

impl ClassCounts {
    pub fn stance_by_class(&self) -> [usize; 4] {
        let mut out = [0; 4];
        for counts in self.stance.values() {
            for (o, c) in out.iter_mut().zip(counts) {
                *o += c;
            }
        }
        out
    }

    pub fn veracity_by_class(&self) -> [usize; 3] {
        let mut out = [0; 3];
        for counts in self.veracity.values() {
            for (o, c) in out.iter_mut().zip(counts) {
                *o += c;
            }
        }
        out
    }

    pub fn stance_total(&self) -> usize {
        self.stance_by_class().iter().sum()
    }

    pub fn veracity_total(&self) -> usize {
        self.veracity_by_class().iter().sum()
    }
}

pub fn class_counts(dataset: &Dataset) -> ClassCounts {
    let mut stance: BTreeMap<Platform, [usize; 4]> = Platform::ALL.iter().map(|&p| (p, [0; 4])).collect();
    let mut veracity: BTreeMap<Platform, [usize; 3]> = Platform::ALL.iter().map(|&p| (p, [0; 3])).collect();
    for thread in &dataset.threads {
        if let Some(v) = thread.veracity_label {
            veracity.get_mut(&thread.platform()).unwrap()[v.index()] += 1;
        }
        for post in thread.posts() {
            if let Some(s) = post.sdqc_label {
                stance.get_mut(&post.platform).unwrap()[s.index()] += 1;
            }
        }
    }
    ClassCounts { stance, veracity }
}
