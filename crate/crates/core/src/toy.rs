//! Synthetic data for desk-scale runs: a templated narrative corpus and a
//! copy-heavy question answering set whose protagonists are out-of-vocabulary.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::keyed_rng;

const NAMES: &[&str] = &[
    "anna", "ben", "clara", "david", "emma", "felix", "greta", "hugo", "iris", "jonas", "karla", "leon", "mira",
    "nils", "olga", "paul", "rosa", "sven", "tara", "ulf", "vera", "walter", "yara", "zeno",
];
const ROLES: &[&str] = &[
    "baker", "farmer", "sailor", "teacher", "doctor", "painter", "miller", "hunter", "singer", "tailor", "smith",
    "guard", "merchant", "weaver", "fisher", "priest",
];
const PLACES: &[&str] = &[
    "river", "market", "castle", "forest", "harbor", "garden", "bridge", "tower", "village", "valley", "church",
    "mill", "school", "station", "library", "meadow", "hill", "lake", "farm", "inn",
];
const OBJECTS: &[&str] = &[
    "lamp", "book", "basket", "coat", "letter", "key", "boat", "bread", "horse", "sword", "ring", "map", "cup",
    "chair", "rope", "bell", "box", "candle", "hat", "wheel", "net", "drum", "flag", "shoe",
];
const ADJECTIVES: &[&str] = &[
    "red", "old", "small", "heavy", "green", "broken", "new", "bright", "dark", "wooden", "golden", "tiny", "tall",
    "quiet", "warm", "cold",
];
const TIMES: &[&str] = &["at night", "in the morning", "at noon", "before dawn", "after dinner", "in the evening"];
/// `(present, past)` pairs.
const CARRY: &[(&str, &str)] = &[
    ("find", "found"),
    ("sell", "sold"),
    ("buy", "bought"),
    ("carry", "carried"),
    ("repair", "repaired"),
    ("hide", "hid"),
    ("paint", "painted"),
    ("lose", "lost"),
];
const MOVE: &[(&str, &str)] = &[("walk", "walked"), ("run", "ran"), ("ride", "rode"), ("sail", "sailed")];
const WEATHER: &[&str] = &[
    "the sky was grey and the wind was strong .",
    "it rained all day .",
    "the sun was bright over the hills .",
    "snow covered the roofs .",
    "a cold fog rose from the water .",
];
/// Syllables of out-of-vocabulary names; the corpus never contains these letters.
const GREEK: &[&str] = &["κα", "λο", "μι", "ρα", "θε", "ζω", "να", "πυ", "δη", "σο", "φι", "χα", "βε", "γυ", "τα", "ξο"];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).unwrap()
}

fn pick2<'a>(rng: &mut ChaCha8Rng, xs: &[(&'a str, &'a str)]) -> (&'a str, &'a str) {
    *xs.choose(rng).unwrap()
}

/// Something `who` did earlier in a document, restated when recalled.
enum Fact<'a> {
    Carry { past: &'a str, adj: &'a str, obj: &'a str },
    Move { past: &'a str, place: &'a str },
}

/// One narrative sentence about `who`, near `home`, and the fact it states if any.
fn sentence<'a>(rng: &mut ChaCha8Rng, who: &str, role: &str, home: &'a str) -> (String, Option<Fact<'a>>) {
    let adj = pick(rng, ADJECTIVES);
    let obj = pick(rng, OBJECTS);
    let place = if rng.gen_bool(0.5) { home } else { pick(rng, PLACES) };
    let s = match rng.gen_range(0..9) {
        0 => {
            let past = pick2(rng, CARRY).1;
            let s = format!("{who} {past} the {adj} {obj} near the {place} .");
            return (s, Some(Fact::Carry { past, adj, obj }));
        }
        1 => {
            let past = pick2(rng, MOVE).1;
            let s = format!("{who} {past} to the {place} {} .", pick(rng, TIMES));
            return (s, Some(Fact::Move { past, place }));
        }
        2 => format!("the {role} lived by the {home} for many years ."),
        3 => format!("{who} gave the {obj} to the {} .", pick(rng, ROLES)),
        4 => format!("at the {place} , {who} met a {adj} {} .", pick(rng, ROLES)),
        5 => format!("{who} said that the {obj} was {adj} ."),
        6 => pick(rng, WEATHER).to_string(),
        7 => format!("{who} {} the {obj} and {} to the {place} .", pick2(rng, CARRY).1, pick2(rng, MOVE).1),
        _ => format!("every day {who} the {role} went to the {home} ."),
    };
    (s, None)
}

/// A cue naming an earlier fact, then that fact restated.
fn recall(who: &str, fact: &Fact<'_>) -> [String; 2] {
    match *fact {
        Fact::Carry { past, adj, obj } => {
            [format!("later {who} remembered the {obj} ."), format!("{who} {past} the {adj} {obj} .")]
        }
        Fact::Move { past, place } => {
            [format!("later {who} remembered the trip ."), format!("{who} {past} to the {place} .")]
        }
    }
}

fn document(rng: &mut ChaCha8Rng) -> String {
    let who = pick(rng, NAMES);
    let role = pick(rng, ROLES);
    let home = pick(rng, PLACES);
    let n = rng.gen_range(6..14);
    let mut s: Vec<String> = vec![format!("{who} was a {role} who lived near the {home} .")];
    let mut facts = Vec::new();
    while s.len() < n {
        if !facts.is_empty() && rng.gen_bool(0.25) {
            let fact = &facts[rng.gen_range(0..facts.len())];
            s.extend(recall(who, fact));
            continue;
        }
        let (line, fact) = sentence(rng, who, role, home);
        s.push(line);
        facts.extend(fact);
    }
    s.join(" ")
}

/// Blank-line separated documents totalling at least `bytes` bytes.
pub fn corpus(seed: u64, bytes: usize) -> String {
    let mut rng = keyed_rng(&[seed, 0xc0]);
    let mut out = String::with_capacity(bytes + 1024);
    while out.len() < bytes {
        if !out.is_empty() {
            out.push_str("\n\n");
        }
        out.push_str(&document(&mut rng));
    }
    out.push('\n');
    out
}

/// A name made of two or three Greek syllables.
pub fn oov_name(rng: &mut ChaCha8Rng) -> String {
    let k = rng.gen_range(2..4);
    (0..k).map(|_| pick(rng, GREEK)).collect()
}

/// One question answering example: `(passage, question, answer)`.
///
/// The answer restates one passage sentence and always starts with the
/// protagonist's name, which only the passage can supply.
pub fn qa_example(rng: &mut ChaCha8Rng) -> (String, String, String) {
    let who = oov_name(rng);
    let role = pick(rng, ROLES);
    let home = pick(rng, PLACES);
    let (verb, past) = pick2(rng, CARRY);
    let (mv, mv_past) = pick2(rng, MOVE);
    let adj = pick(rng, ADJECTIVES);
    let obj = pick(rng, OBJECTS);
    let place = pick(rng, PLACES);
    let filler = sentence(rng, &who, role, home).0;
    let key_obj = format!("{who} {past} the {adj} {obj} near the {home} .");
    let key_move = format!("{who} {mv_past} to the {place} {} .", pick(rng, TIMES));
    let mut sents = [format!("{who} was a {role} who lived near the {home} ."), key_obj, filler, key_move];
    sents[1..].shuffle(rng);
    let passage = sents.join(" ");
    let (question, answer) = if rng.gen_bool(0.5) {
        (format!("what did {who} {verb} ?"), format!("{who} {past} the {adj} {obj} ."))
    } else {
        (format!("where did {who} {mv} ?"), format!("{who} {mv_past} to the {place} ."))
    };
    (passage, question, answer)
}

/// `n` examples as tab-separated `passage, question, answer` lines.
pub fn qa_set(seed: u64, n: usize) -> String {
    let mut rng = keyed_rng(&[seed, 0x9a]);
    (0..n)
        .map(|_| {
            let (p, q, a) = qa_example(&mut rng);
            format!("{p}\t{q}\t{a}\n")
        })
        .collect()
}
