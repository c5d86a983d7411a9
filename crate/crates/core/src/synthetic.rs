//! Seeded synthetic corpora with known structure, used by the test suites and
//! for smoke-testing the pipeline without real data.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{EntitySpan, EntityType, RelationLabel, TokenizedInstance};

const FILLER: [&str; 24] = [
    "the", "in", "during", "fiscal", "quarter", "reported", "company", "also", "annual",
    "filing", "under", "terms", "previously", "disclosed", "its", "as", "a", "result",
    "certain", "agreement", "note", "pursuant", "to", "herein",
];

const NAMES: [&str; 24] = [
    "Acme", "Globex", "Initech", "Umbrella", "Hooli", "Vandelay", "Soylent", "Tyrell",
    "Wayne", "Stark", "Wonka", "Cyberdyne", "Smith", "Jones", "Garcia", "Chen", "Patel",
    "Okafor", "Novak", "Silva", "Holdings", "Group", "Partners", "Capital",
];

/// Verbs per relation for [`verb_corpus`]; the relation is a function of the verb.
pub const VERB_RELATIONS: [(&str, [&str; 2]); 4] = [
    ("employee_of", ["joined", "serves"]),
    ("founder_of", ["founded", "started"]),
    ("acquired_by", ["acquired", "bought"]),
    ("no_relation", ["met", "mentioned"]),
];

/// (subject type, object type, context word, relation) for [`type_pair_corpus`].
pub const TYPE_PAIR_CELLS: [(&str, &str, &str, &str); 9] = [
    ("PERS", "ORG", "with", "employee_of"),
    ("PERS", "ORG", "from", "founder_of"),
    ("PERS", "ORG", "and", "no_relation"),
    ("ORG", "ORG", "with", "partner_of"),
    ("ORG", "ORG", "from", "subsidiary_of"),
    ("ORG", "ORG", "and", "no_relation"),
    ("ORG", "GPE", "with", "operates_in"),
    ("ORG", "GPE", "from", "headquartered_in"),
    ("ORG", "GPE", "and", "no_relation"),
];

#[derive(Debug, Clone)]
pub struct SyntheticSplit {
    pub train: Vec<TokenizedInstance>,
    pub test: Vec<TokenizedInstance>,
}

fn words(rng: &mut ChaCha8Rng, pool: &[&str], lo: usize, hi: usize) -> Vec<String> {
    let n = rng.gen_range(lo..=hi);
    (0..n)
        .map(|_| pool.choose(rng).expect("non-empty pool").to_string())
        .collect()
}

/// Builds `prefix SUBJ middle OBJ suffix` with names drawn from a type-agnostic pool.
fn sentence(
    rng: &mut ChaCha8Rng,
    id: String,
    middle: Vec<String>,
    subj_type: &str,
    obj_type: &str,
    relation: &str,
) -> TokenizedInstance {
    let mut tokens = words(rng, &FILLER, 0, 3);
    let subj_name = words(rng, &NAMES, 1, 2);
    let subj = (tokens.len(), tokens.len() + subj_name.len());
    tokens.extend(subj_name);
    tokens.extend(middle);
    let obj_name = words(rng, &NAMES, 1, 2);
    let obj = (tokens.len(), tokens.len() + obj_name.len());
    tokens.extend(obj_name);
    tokens.extend(words(rng, &FILLER, 0, 3));
    TokenizedInstance {
        id,
        tokens,
        subj: EntitySpan::new(subj.0, subj.1, EntityType::new(subj_type).expect("static type")),
        obj: EntitySpan::new(obj.0, obj.1, EntityType::new(obj_type).expect("static type")),
        relation: Some(RelationLabel::new(relation)),
    }
}

/// Corpus where the relation is determined by the verb between the entities. Every
/// instance is PERS-ORG, so routing leaves it in one bucket.
/// `train` holds `train_per_label` instances of each of the four relations, `test`
/// holds `test_per_label`; both are shuffled.
pub fn verb_corpus(seed: u64, train_per_label: usize, test_per_label: usize) -> SyntheticSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let make = |split: &str, per_label: usize, rng: &mut ChaCha8Rng| {
        let mut out = Vec::new();
        for (relation, verbs) in VERB_RELATIONS {
            for _ in 0..per_label {
                let verb = verbs.choose(rng).expect("two verbs").to_string();
                let mut middle = vec![verb];
                middle.extend(words(rng, &FILLER, 0, 2));
                let id = format!("{split}-{:04}", out.len());
                out.push(sentence(rng, id, middle, "PERS", "ORG", relation));
            }
        }
        out.shuffle(rng);
        out
    };
    let train = make("train", train_per_label, &mut rng);
    let test = make("test", test_per_label, &mut rng);
    SyntheticSplit { train, test }
}

/// Corpus where the relation is a function of the entity-type pair together with a
/// context word; entity names carry no type information. Each of the nine
/// (pair, word) cells gets `train_per_cell` / `test_per_cell` instances.
pub fn type_pair_corpus(seed: u64, train_per_cell: usize, test_per_cell: usize) -> SyntheticSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let make = |split: &str, per_cell: usize, rng: &mut ChaCha8Rng| {
        let mut out = Vec::new();
        for (subj_type, obj_type, word, relation) in TYPE_PAIR_CELLS {
            for _ in 0..per_cell {
                let mut middle = words(rng, &FILLER, 0, 1);
                middle.push(word.to_string());
                middle.extend(words(rng, &FILLER, 0, 1));
                let id = format!("{split}-{:04}", out.len());
                out.push(sentence(rng, id, middle, subj_type, obj_type, relation));
            }
        }
        out.shuffle(rng);
        out
    };
    let train = make("train", train_per_cell, &mut rng);
    let test = make("test", test_per_cell, &mut rng);
    SyntheticSplit { train, test }
}
