//! Deterministic synthetic Stack-Exchange-style dump for desk-scale runs.
//!
//! Units are grouped into areas, each area into topics. Every topic has a
//! hub question; the other questions of the topic link to it, a few of them
//! as near-copies marked duplicate. Hubs of neighbouring topics in an area
//! are linked, so leaves of different topics sit three links apart, and
//! areas share no links at all.

use std::fmt::Write as _;
use std::path::Path;

use quick_xml::escape::escape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataforge::{Dump, KnowledgeUnit, LinkRecord, DUPLICATE_LINK_TYPE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub areas: usize,
    pub topics_per_area: usize,
    pub units_per_topic: usize,
    pub duplicates_per_topic: usize,
    pub common_words: usize,
    pub area_words: usize,
    pub topic_words: usize,
    /// Probability that a near-copy keeps a token of the original.
    pub copy_keep: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            areas: 8,
            topics_per_area: 5,
            units_per_topic: 50,
            duplicates_per_topic: 10,
            common_words: 40,
            area_words: 12,
            topic_words: 15,
            copy_keep: 0.7,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.areas < 2 || self.topics_per_area < 2 {
            return Err(Error::Config("synthetic corpus needs >= 2 areas and >= 2 topics per area".into()));
        }
        if self.units_per_topic < 2 || self.duplicates_per_topic >= self.units_per_topic {
            return Err(Error::Config("need >= 2 units per topic and fewer duplicates than units".into()));
        }
        if self.common_words == 0 || self.area_words == 0 || self.topic_words == 0 {
            return Err(Error::Config("word pools must be non-empty".into()));
        }
        if !(0.0..=1.0).contains(&self.copy_keep) {
            return Err(Error::Config("copy_keep must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn n_units(&self) -> usize {
        self.areas * self.topics_per_area * self.units_per_topic
    }
}

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ne", "ru", "ti", "so", "va", "pe", "zu", "ha", "do", "gi", "fo", "be", "wy",
];

/// Pseudo-word for a vocabulary index; distinct indices give distinct words.
fn word(index: usize) -> String {
    let mut s = String::new();
    let mut i = index;
    for _ in 0..3 {
        s.push_str(SYLLABLES[i % SYLLABLES.len()]);
        i /= SYLLABLES.len();
    }
    while i > 0 {
        s.push_str(SYLLABLES[i % SYLLABLES.len()]);
        i /= SYLLABLES.len();
    }
    s
}

struct Vocab<'a> {
    cfg: &'a SynthConfig,
}

impl Vocab<'_> {
    fn common(&self, i: usize) -> usize {
        i
    }

    fn area(&self, area: usize, i: usize) -> usize {
        self.cfg.common_words + area * self.cfg.area_words + i
    }

    fn topic(&self, topic: usize, i: usize) -> usize {
        self.cfg.common_words + self.cfg.areas * self.cfg.area_words + topic * self.cfg.topic_words + i
    }

    fn draw<R: Rng>(&self, rng: &mut R, area: usize, topic: usize) -> String {
        let u: f64 = rng.gen();
        let idx = if u < 0.5 {
            self.topic(topic, rng.gen_range(0..self.cfg.topic_words))
        } else if u < 0.7 {
            self.area(area, rng.gen_range(0..self.cfg.area_words))
        } else {
            self.common(rng.gen_range(0..self.cfg.common_words))
        };
        word(idx)
    }

    fn sentence<R: Rng>(&self, rng: &mut R, area: usize, topic: usize, lo: usize, hi: usize) -> Vec<String> {
        let n = rng.gen_range(lo..=hi);
        (0..n).map(|_| self.draw(rng, area, topic)).collect()
    }
}

struct Text {
    title: Vec<String>,
    body: Vec<String>,
    answers: Vec<Vec<String>>,
}

fn html(words: &[String]) -> String {
    format!("<p>{}</p>", words.join(" "))
}

/// Generates the synthetic dump: units in id order and their links.
pub fn generate(cfg: &SynthConfig) -> Result<Dump> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab = Vocab { cfg };
    let mut units = Vec::with_capacity(cfg.n_units());
    let mut links = Vec::new();
    let mut next_id: u64 = 1;
    let link = |a: u64, b: u64, t: u32, links: &mut Vec<LinkRecord>| {
        links.push(LinkRecord {
            post_id: a,
            related_post_id: b,
            link_type: t,
        })
    };

    for area in 0..cfg.areas {
        let mut prev_hub: Option<u64> = None;
        for t in 0..cfg.topics_per_area {
            let topic = area * cfg.topics_per_area + t;
            let mut hub: Option<(u64, Text)> = None;
            for k in 0..cfg.units_per_topic {
                let text = match &hub {
                    Some((_, orig)) if k <= cfg.duplicates_per_topic => {
                        let mut perturb = |ws: &[String]| -> Vec<String> {
                            ws.iter()
                                .map(|w| {
                                    if rng.gen_bool(cfg.copy_keep) {
                                        w.clone()
                                    } else {
                                        vocab.draw(&mut rng, area, topic)
                                    }
                                })
                                .collect()
                        };
                        Text {
                            title: perturb(&orig.title),
                            body: perturb(&orig.body),
                            answers: orig.answers.iter().map(|a| perturb(a)).collect(),
                        }
                    }
                    _ => {
                        let n_answers = rng.gen_range(1..=2);
                        Text {
                            title: vocab.sentence(&mut rng, area, topic, 4, 7),
                            body: vocab.sentence(&mut rng, area, topic, 8, 16),
                            answers: (0..n_answers)
                                .map(|_| vocab.sentence(&mut rng, area, topic, 5, 10))
                                .collect(),
                        }
                    }
                };
                let id = next_id;
                next_id += 1;
                units.push(KnowledgeUnit {
                    id,
                    title: text.title.join(" "),
                    body: html(&text.body),
                    answers: text.answers.iter().map(|a| html(a)).collect(),
                    tags: vec!["java".into(), format!("topic-{topic}")],
                });
                match &hub {
                    None => {
                        if let Some(p) = prev_hub {
                            link(p, id, 1, &mut links);
                        }
                        hub = Some((id, text));
                    }
                    Some((h, _)) => {
                        let kind = if k <= cfg.duplicates_per_topic { DUPLICATE_LINK_TYPE } else { 1 };
                        link(id, *h, kind, &mut links);
                    }
                }
            }
            prev_hub = hub.map(|(h, _)| h);
        }
    }
    Ok(Dump {
        units,
        links,
        skipped_rows: 0,
    })
}

/// Renders the dump as `Posts.xml` and `PostLinks.xml` text.
pub fn to_xml(dump: &Dump) -> (String, String) {
    let max_id = dump.units.iter().map(|u| u.id).max().unwrap_or(0);
    let mut answer_id = max_id + 1;
    let mut posts = String::from("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<posts>\n");
    for u in &dump.units {
        let tags: String = u.tags.iter().map(|t| format!("<{t}>")).collect();
        let _ = writeln!(
            posts,
            "  <row Id=\"{}\" PostTypeId=\"1\" Title=\"{}\" Body=\"{}\" Tags=\"{}\" />",
            u.id,
            escape(u.title.as_str()),
            escape(u.body.as_str()),
            escape(tags.as_str())
        );
        for a in &u.answers {
            let _ = writeln!(
                posts,
                "  <row Id=\"{answer_id}\" PostTypeId=\"2\" ParentId=\"{}\" Body=\"{}\" />",
                u.id,
                escape(a.as_str())
            );
            answer_id += 1;
        }
    }
    posts.push_str("</posts>\n");
    let mut links = String::from("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<postlinks>\n");
    for (i, l) in dump.links.iter().enumerate() {
        let _ = writeln!(
            links,
            "  <row Id=\"{}\" PostId=\"{}\" RelatedPostId=\"{}\" LinkTypeId=\"{}\" />",
            i + 1,
            l.post_id,
            l.related_post_id,
            l.link_type
        );
    }
    links.push_str("</postlinks>\n");
    (posts, links)
}

/// Writes `Posts.xml` and `PostLinks.xml` into `dir`.
pub fn write_dump(dump: &Dump, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (posts, links) = to_xml(dump);
    for (name, text) in [("Posts.xml", posts), ("PostLinks.xml", links)] {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataforge::{label_pairs, parse_links, parse_posts, LinkGraph};

    #[test]
    fn words_are_distinct() {
        let words: std::collections::HashSet<String> = (0..5000).map(word).collect();
        assert_eq!(words.len(), 5000);
    }

    #[test]
    fn xml_round_trip() {
        let cfg = SynthConfig {
            areas: 2,
            topics_per_area: 2,
            units_per_topic: 4,
            duplicates_per_topic: 1,
            ..SynthConfig::default()
        };
        let dump = generate(&cfg).unwrap();
        assert_eq!(dump.units.len(), 16);
        let (posts, links) = to_xml(&dump);
        let (units, skipped) = parse_posts(posts.as_bytes()).unwrap();
        assert_eq!(skipped, 0);
        assert_eq!(units, dump.units);
        assert_eq!(parse_links(links.as_bytes()).unwrap().0, dump.links);
    }

    #[test]
    fn graph_shape() {
        let cfg = SynthConfig::default();
        let dump = generate(&cfg).unwrap();
        assert_eq!(dump.units.len(), 2000);
        let g = LinkGraph::new(&dump.links);
        let comps: std::collections::HashSet<usize> = g.components().into_values().collect();
        assert_eq!(comps.len(), cfg.areas);
        // leaves of neighbouring topics are three links apart
        let leaf_a = dump.units[cfg.units_per_topic - 1].id;
        let leaf_b = dump.units[2 * cfg.units_per_topic - 1].id;
        assert_eq!(g.distance(leaf_a, leaf_b), Some(3));
        let ds = label_pairs(&dump.units, &dump.links, [250; 4], 1).unwrap();
        assert_eq!(ds.len(), 1000);
        assert_eq!(generate(&cfg).unwrap(), dump);
    }
}
