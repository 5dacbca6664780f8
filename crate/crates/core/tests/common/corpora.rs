//! Corpus builders shared by integration and acceptance tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub fn jsonl(records: &[serde_json::Value]) -> String {
    records.iter().map(|r| format!("{r}\n")).collect()
}

pub fn doc(id: &str, title: &str, text: &str) -> serde_json::Value {
    json!({"id": id, "title": title, "text": text})
}

const ONSETS: &[&str] = &[
    "b", "br", "c", "d", "dr", "f", "g", "gr", "h", "k", "kr", "l", "m", "n", "p", "r", "s", "st",
    "t", "th", "v", "w", "z",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ai", "ei", "ou"];
const CODAS: &[&str] = &["", "n", "r", "l", "s", "th", "nd", "rk"];
const VARIANTS: &[&str] = &["", "a", "en", "ia", "ford", "ton"];
const KINDS: &[&str] = &["River", "Hall", "Institute", "Prize", "Abbey", "Bridge"];
const FILLER: &[&str] = &[
    "visited",
    "described",
    "near",
    "the",
    "old",
    "northern",
    "council",
    "later",
    "built",
    "record",
    "famous",
    "small",
    "harbour",
    "market",
    "journey",
    "letters",
    "with",
    "long",
    "season",
    "valley",
    "founded",
    "school",
    "trade",
    "written",
    "early",
    "second",
    "across",
];

fn stem(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut s = String::new();
    for _ in 0..syllables {
        s.push_str(ONSETS.choose(rng).unwrap());
        s.push_str(NUCLEI.choose(rng).unwrap());
        s.push_str(CODAS.choose(rng).unwrap());
    }
    let mut chars = s.chars();
    let first = chars.next().unwrap().to_uppercase().collect::<String>();
    first + chars.as_str()
}

/// Pool of entity surfaces built from name families, so that variants of
/// one stem are close in trigram space.
pub fn entity_pool(rng: &mut ChaCha8Rng, stems: usize) -> Vec<String> {
    let mut pool = Vec::new();
    for _ in 0..stems {
        let s = stem(rng);
        for v in VARIANTS {
            pool.push(format!("{s}{v}"));
        }
        pool.push(format!("{s} {}", KINDS.choose(rng).unwrap()));
    }
    pool
}

/// `n_docs` synthetic documents drawn from a fixed distribution: each
/// document has 3-6 sentences, each naming 1-3 entities from a shared pool
/// with a skewed popularity profile.
pub fn synthetic_corpus(n_docs: usize, seed: u64) -> String {
    let mut pool_rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let pool = entity_pool(&mut pool_rng, (n_docs / 4).max(250));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for d in 0..n_docs {
        let mut sentences = Vec::new();
        let mut title = None;
        for _ in 0..rng.gen_range(3..=6) {
            let mut words: Vec<String> = Vec::new();
            for e in 0..rng.gen_range(1..=3) {
                let u: f64 = rng.gen();
                let ent = &pool[((u * u) * pool.len() as f64) as usize];
                title.get_or_insert_with(|| ent.clone());
                if e > 0 {
                    words.push(FILLER.choose(&mut rng).unwrap().to_string());
                }
                words.push(ent.clone());
                for _ in 0..rng.gen_range(2..=5) {
                    words.push(FILLER.choose(&mut rng).unwrap().to_string());
                }
            }
            sentences.push(format!("{}.", words.join(" ")));
        }
        let record = doc(
            &format!("doc-{d}"),
            title.as_deref().unwrap_or(""),
            &sentences.join(" "),
        );
        out.push_str(&format!("{record}\n"));
    }
    out
}

/// A QA pair over one of the small fixture corpora.
#[derive(Debug, Clone)]
pub struct GapQuestion {
    pub question: &'static str,
    pub answers: Vec<&'static str>,
    pub gold: &'static str,
}

/// Twenty documents in which the passage answering the question shares no
/// extracted entity with it. The question names an entity found only in a
/// bridge document; the gold document mentions a spelling variant of that
/// entity, which lands in the same embedding cluster.
pub fn semantic_gap_corpus() -> (String, Vec<GapQuestion>) {
    let docs = vec![
        doc(
            "bridge",
            "Valdemar Ostrand",
            "Valdemar Ostrand ruled the northern province for four decades and reformed its tax rolls, roads and granaries.",
        ),
        doc(
            "gold",
            "Elin Sorvik",
            "King Valdemar Ostrandsson took Elin Sorvik as his consort; she was born in Harrowgate.",
        ),
        doc(
            "lure",
            "Consorts",
            "where was the consort born? the spouse of a monarch was born where the court stayed.",
        ),
        doc("f01", "Brannock Mill", "Brannock Mill ground barley for the villages along the Teel."),
        doc("f02", "Corriden Pass", "Corriden Pass closes every winter after the first snow."),
        doc("f03", "Mattis Hal", "Mattis Hal painted harbours and fishing boats in Lowmere."),
        doc("f04", "Quenby Observatory", "Quenby Observatory catalogued comets for the Astral Society."),
        doc("f05", "Orla Fenwick", "Orla Fenwick wrote three novels about the Saltmarsh coast."),
        doc("f06", "Dunmore Bridge", "Dunmore Bridge was rebuilt in stone by Teodor Vask."),
        doc("f07", "Ysolde Marra", "Ysolde Marra led the Grainhall cooperative through the famine."),
        doc("f08", "Pellam Rail", "Pellam Rail linked Carrow to the eastern ports."),
        doc("f09", "Tobin Achterberg", "Tobin Achterberg studied lichens on the Fellgrave moors."),
        doc("f10", "Siskin Theatre", "Siskin Theatre staged comedies by Ansel Poirot."),
        doc("f11", "Warrenby", "Warrenby is a market town known for wool and cheese."),
        doc("f12", "Greta Lund", "Greta Lund coached the Halvard rowing club to six titles."),
        doc("f13", "Kestrel Abbey", "Kestrel Abbey kept bees and brewed mead for Abbot Rainer."),
        doc("f14", "Norrin Cove", "Norrin Cove shelters seals during the spring storms."),
        doc("f15", "Albrecht Fenn", "Albrecht Fenn designed the clock tower of Mirrowby."),
        doc("f16", "Luma Press", "Luma Press printed maps of the Skarn archipelago."),
        doc("f17", "Harlan Voss", "Harlan Voss founded the Tidewater school of navigation."),
    ];
    let questions = vec![GapQuestion {
        question: "Where was the consort of Valdemar Ostrand born?",
        answers: vec!["Harrowgate"],
        gold: "gold",
    }];
    (jsonl(&docs), questions)
}

/// Settings used for the semantic-gap scenario: the 2wiki preset, whose
/// small evidence weight keeps the bridge passage from dominating.
pub fn gap_config() -> hyperrag::EngineConfig {
    hyperrag::EngineConfig::from_json_str(r#"{"preset": "2wiki"}"#)
        .unwrap()
        .0
}

/// Query options with the cluster hyperedges removed and no reward term.
pub fn ablated(options: &hyperrag::QueryOptions) -> hyperrag::QueryOptions {
    let mut o = options.clone();
    o.semantic_hyperedges = false;
    o.scoring.lambda2 = 0.0;
    o
}
