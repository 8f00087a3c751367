//! Deterministic offline stand-ins for the captioner and paraphraser.

use crate::labels::Category;

use super::client::{ClientError, FmClient, FmKind, FmRequest};

/// Fills a fixed sentence from the ground truth carried in the request hint.
#[derive(Clone, Debug, Default)]
pub struct MockCaptioner;

impl MockCaptioner {
    pub fn describe(hint: &super::client::FrameHint) -> String {
        let color = hint.color.map(|c| format!("{c} ")).unwrap_or_default();
        let what = hint.category.phrase();
        let state = match hint.category {
            Category::Pedestrian => "standing",
            Category::TrafficCone | Category::Barrier => "placed",
            _ => "parked",
        };
        let article = if starts_with_vowel(&color) || (color.is_empty() && starts_with_vowel(what)) {
            "An"
        } else {
            "A"
        };
        format!("{article} {color}{what} is {state} on the {} side of the street.", hint.viewpoint.phrase())
    }
}

impl FmClient for MockCaptioner {
    fn kind(&self) -> FmKind {
        FmKind::Captioner
    }

    fn complete(&self, request: &FmRequest) -> Result<String, ClientError> {
        request.hint.as_ref().map(Self::describe).ok_or_else(|| ClientError {
            attempts: 1,
            last_error: "mock captioner needs a ground-truth hint".into(),
        })
    }
}

/// Phrase-level synonym table used by [`MockParaphraser`]. Keys are
/// lowercase word sequences; longer keys win.
pub const SYNONYMS: &[(&str, &[&str])] = &[
    ("at night", &["under the cover of darkness", "after dark"]),
    ("driving down", &["navigating", "cruising along"]),
    ("in the middle of", &["amid", "at the center of"]),
    ("car", &["automobile", "vehicle"]),
    ("truck", &["lorry", "hauler"]),
    ("bus", &["coach"]),
    ("pedestrian", &["passerby", "walker"]),
    ("street", &["boulevard", "roadway"]),
    ("road", &["roadway", "lane"]),
    ("parked", &["stationary", "resting"]),
    ("standing", &["positioned", "waiting"]),
    ("placed", &["set", "positioned"]),
    ("woman", &["lady"]),
    ("dress", &["gown"]),
    ("red", &["crimson", "scarlet"]),
    ("blue", &["azure", "navy"]),
    ("black", &["dark", "jet-black"]),
    ("white", &["pale", "snow-white"]),
    ("gray", &["slate", "ashen"]),
    ("yellow", &["golden", "amber"]),
    ("side", &["flank"]),
];

/// Replaces known phrases with seeded synonym choices.
#[derive(Clone, Debug)]
pub struct MockParaphraser {
    pub seed: u64,
}

fn starts_with_vowel(s: &str) -> bool {
    matches!(s.chars().next().map(|c| c.to_ascii_lowercase()), Some('a' | 'e' | 'i' | 'o' | 'u'))
}

fn pick(seed: u64, key: &str, n: usize) -> usize {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for b in key.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    (h % n as u64) as usize
}

impl MockParaphraser {
    pub fn paraphrase(&self, sentence: &str) -> String {
        let words: Vec<&str> = sentence.split_whitespace().collect();
        let bare: Vec<String> = words
            .iter()
            .map(|w| w.trim_end_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
            .collect();
        let mut out: Vec<String> = Vec::with_capacity(words.len());
        let mut i = 0;
        while i < words.len() {
            let mut matched = None;
            for &(key, alts) in SYNONYMS {
                let n = key.split(' ').count();
                if i + n <= words.len()
                    && bare[i..i + n].join(" ") == key
                    && matched.map_or(true, |(m, _, _)| n > m)
                {
                    matched = Some((n, key, alts));
                }
            }
            match matched {
                Some((n, key, alts)) => {
                    let last = words[i + n - 1];
                    let tail = &last[last.trim_end_matches(|c: char| !c.is_alphanumeric()).len()..];
                    let mut rep = alts[pick(self.seed, key, alts.len())].to_string();
                    if words[i].chars().next().is_some_and(char::is_uppercase) {
                        rep = capitalize(&rep);
                    }
                    out.push(rep + tail);
                    i += n;
                }
                None => {
                    out.push(words[i].to_string());
                    i += 1;
                }
            }
        }
        fix_articles(&mut out);
        out.join(" ")
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().collect::<String>() + c.as_str()).unwrap_or_default()
}

fn fix_articles(words: &mut [String]) {
    for i in 0..words.len().saturating_sub(1) {
        let vowel = starts_with_vowel(&words[i + 1]);
        let w = &mut words[i];
        match (w.as_str(), vowel) {
            ("a", true) => *w = "an".into(),
            ("A", true) => *w = "An".into(),
            ("an", false) => *w = "a".into(),
            ("An", false) => *w = "A".into(),
            _ => {}
        }
    }
}

impl FmClient for MockParaphraser {
    fn kind(&self) -> FmKind {
        FmKind::Paraphraser
    }

    fn complete(&self, request: &FmRequest) -> Result<String, ClientError> {
        // The sentence to rewrite follows the instruction on the next line.
        let sentence = request.prompt.split_once('\n').map_or(request.prompt.as_str(), |(_, s)| s);
        Ok(self.paraphrase(sentence.trim()))
    }
}
