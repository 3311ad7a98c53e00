//! Seeded synthetic treebank generator for agreement experiments.
//!
//! The generator realizes a tiny projective dependency grammar with
//! subject/verb number agreement, optional prepositional-phrase distractors
//! between the subject and the verb, optional objects, and optional
//! sentence-final adverbs. Everything is driven by a fixed lexicon and a
//! seeded RNG, so corpora, held-out splits, and minimal pairs are exactly
//! reproducible from `(size, seed)`.
//!
//! Minimal pairs come in mirrored twins: every sampled skeleton is realized
//! once with a singular subject and once with a plural subject, using the
//! same lemmas and structure. An untrained scorer whose verb-form preference
//! is context-independent therefore gets one twin right and the other wrong,
//! which keeps the untrained baseline pinned near chance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::treebank::{Corpus, DepTree, Token, TreebankError};

const DETERMINERS: [&str; 4] = ["the", "some", "my", "your"];

const SG_NOUNS: [&str; 12] = [
    "cat", "dog", "bird", "horse", "fox", "turtle", "teacher", "pilot", "farmer", "author",
    "robot", "lawyer",
];
const PL_NOUNS: [&str; 12] = [
    "cats", "dogs", "birds", "horses", "foxes", "turtles", "teachers", "pilots", "farmers",
    "authors", "robots", "lawyers",
];

const SG_INTRANS: [&str; 6] = ["sleeps", "runs", "waits", "smiles", "arrives", "falls"];
const PL_INTRANS: [&str; 6] = ["sleep", "run", "wait", "smile", "arrive", "fall"];

const SG_TRANS: [&str; 6] = ["sees", "likes", "chases", "admires", "follows", "avoids"];
const PL_TRANS: [&str; 6] = ["see", "like", "chase", "admire", "follow", "avoid"];

const PREPOSITIONS: [&str; 5] = ["near", "behind", "beside", "above", "below"];

const ADVERBS: [&str; 5] = ["today", "often", "quietly", "twice", "again"];

/// Probability of a distractor PP on the subject when not forced.
const SUBJ_PP_PROB: f64 = 0.55;
/// Probability that the verb is transitive.
const TRANS_PROB: f64 = 0.5;
/// Probability of a PP on the object.
const OBJ_PP_PROB: f64 = 0.2;
/// Probability of a sentence-final adverb when not forced.
const ADVERB_PROB: f64 = 0.35;

/// Grammatical number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Num {
    Sg,
    Pl,
}

impl Num {
    fn flip(self) -> Num {
        match self {
            Num::Sg => Num::Pl,
            Num::Pl => Num::Sg,
        }
    }

    fn random(rng: &mut ChaCha8Rng) -> Num {
        if rng.random::<f64>() < 0.5 {
            Num::Sg
        } else {
            Num::Pl
        }
    }
}

/// Number of a PP-internal noun, resolved at realization time.
#[derive(Debug, Clone, Copy)]
enum PpNum {
    /// Always the opposite of the subject (a true agreement distractor).
    OppositeOfSubject,
    /// A fixed number independent of the subject.
    Fixed(Num),
}

#[derive(Debug, Clone, Copy)]
struct PpSkeleton {
    prep: usize,
    det: usize,
    noun: usize,
    num: PpNum,
}

#[derive(Debug, Clone, Copy)]
struct ObjSkeleton {
    det: usize,
    noun: usize,
    num: Num,
    pp: Option<PpSkeleton>,
}

/// A lexically grounded sentence plan that still abstracts over the
/// subject's number. Realizing the same skeleton with both numbers yields
/// lemma-matched sentence pairs.
#[derive(Debug, Clone, Copy)]
struct Skeleton {
    subj_det: usize,
    subj_noun: usize,
    subj_pp: Option<PpSkeleton>,
    verb: usize,
    transitive: bool,
    obj: Option<ObjSkeleton>,
    adverb: Option<usize>,
}

/// A lemma-matched grammatical/ungrammatical sentence pair with shared
/// gold structure. The two trees have identical heads and differ in
/// exactly the verb form.
#[derive(Debug, Clone)]
pub struct AgreementPair {
    /// `"simple"` (no distractor) or `"distractor"` (subject PP whose noun
    /// has the opposite number).
    pub tag: String,
    pub good: DepTree,
    pub bad: DepTree,
}

struct Builder {
    words: Vec<String>,
    heads: Vec<usize>,
}

impl Builder {
    fn new() -> Self {
        Builder { words: Vec::new(), heads: Vec::new() }
    }

    /// Appends a word with a placeholder head and returns its 1-based position.
    fn push(&mut self, word: &str) -> usize {
        self.words.push(word.to_string());
        self.heads.push(0);
        self.words.len()
    }

    fn set_head(&mut self, pos: usize, head: usize) {
        self.heads[pos - 1] = head;
    }

    fn finish(self) -> Result<DepTree, TreebankError> {
        let tokens = self.words.into_iter().map(Token::new).collect();
        DepTree::new(tokens, self.heads)
    }
}

fn noun_form(idx: usize, num: Num) -> &'static str {
    match num {
        Num::Sg => SG_NOUNS[idx],
        Num::Pl => PL_NOUNS[idx],
    }
}

fn verb_form(idx: usize, transitive: bool, num: Num) -> &'static str {
    match (transitive, num) {
        (false, Num::Sg) => SG_INTRANS[idx],
        (false, Num::Pl) => PL_INTRANS[idx],
        (true, Num::Sg) => SG_TRANS[idx],
        (true, Num::Pl) => PL_TRANS[idx],
    }
}

fn sample_pp(rng: &mut ChaCha8Rng, num: PpNum) -> PpSkeleton {
    PpSkeleton {
        prep: rng.random_range(0..PREPOSITIONS.len()),
        det: rng.random_range(0..DETERMINERS.len()),
        noun: rng.random_range(0..SG_NOUNS.len()),
        num,
    }
}

/// Samples a sentence plan. `force_subj_pp` pins whether the subject carries
/// a distractor PP (used by the pair generator to control tags); `None`
/// leaves it to chance with an independently numbered PP.
fn sample_skeleton(rng: &mut ChaCha8Rng, force_subj_pp: Option<bool>) -> Skeleton {
    let subj_pp = match force_subj_pp {
        Some(true) => Some(sample_pp(rng, PpNum::OppositeOfSubject)),
        Some(false) => None,
        None => {
            if rng.random::<f64>() < SUBJ_PP_PROB {
                let num = PpNum::Fixed(Num::random(rng));
                Some(sample_pp(rng, num))
            } else {
                None
            }
        }
    };
    let transitive = rng.random::<f64>() < TRANS_PROB;
    let obj = if transitive {
        let pp = if rng.random::<f64>() < OBJ_PP_PROB {
            let num = PpNum::Fixed(Num::random(rng));
            Some(sample_pp(rng, num))
        } else {
            None
        };
        Some(ObjSkeleton {
            det: rng.random_range(0..DETERMINERS.len()),
            noun: rng.random_range(0..SG_NOUNS.len()),
            num: Num::random(rng),
            pp,
        })
    } else {
        None
    };
    // Sentences must span at least four words; a bare "det noun verb"
    // clause gets a mandatory adverb.
    let minimal = subj_pp.is_none() && obj.is_none();
    let adverb = if minimal || rng.random::<f64>() < ADVERB_PROB {
        Some(rng.random_range(0..ADVERBS.len()))
    } else {
        None
    };
    Skeleton {
        subj_det: rng.random_range(0..DETERMINERS.len()),
        subj_noun: rng.random_range(0..SG_NOUNS.len()),
        subj_pp,
        verb: rng.random_range(0..SG_INTRANS.len()),
        transitive,
        obj,
        adverb,
    }
}

fn attach_pp(b: &mut Builder, pp: &PpSkeleton, head_noun: usize, subj_num: Num) {
    let prep_pos = b.push(PREPOSITIONS[pp.prep]);
    b.set_head(prep_pos, head_noun);
    let det_pos = b.push(DETERMINERS[pp.det]);
    let num = match pp.num {
        PpNum::OppositeOfSubject => subj_num.flip(),
        PpNum::Fixed(n) => n,
    };
    let noun_pos = b.push(noun_form(pp.noun, num));
    b.set_head(det_pos, noun_pos);
    b.set_head(noun_pos, prep_pos);
}

/// Realizes a skeleton with the given subject number and (possibly
/// disagreeing) verb number.
fn realize(skel: &Skeleton, subj_num: Num, verb_num: Num) -> Result<DepTree, TreebankError> {
    let mut b = Builder::new();
    let det_pos = b.push(DETERMINERS[skel.subj_det]);
    let subj_pos = b.push(noun_form(skel.subj_noun, subj_num));
    b.set_head(det_pos, subj_pos);
    if let Some(pp) = &skel.subj_pp {
        attach_pp(&mut b, pp, subj_pos, subj_num);
    }
    let verb_pos = b.push(verb_form(skel.verb, skel.transitive, verb_num));
    b.set_head(subj_pos, verb_pos);
    if let Some(obj) = &skel.obj {
        let odet_pos = b.push(DETERMINERS[obj.det]);
        let onoun_pos = b.push(noun_form(obj.noun, obj.num));
        b.set_head(odet_pos, onoun_pos);
        b.set_head(onoun_pos, verb_pos);
        if let Some(pp) = &obj.pp {
            attach_pp(&mut b, pp, onoun_pos, subj_num);
        }
    }
    if let Some(adv) = skel.adverb {
        let adv_pos = b.push(ADVERBS[adv]);
        b.set_head(adv_pos, verb_pos);
    }
    b.finish()
}

/// Generates `sentences` grammatical trees from the agreement grammar.
pub fn generate_trees(sentences: usize, seed: u64) -> Result<Vec<DepTree>, TreebankError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trees = Vec::with_capacity(sentences);
    for _ in 0..sentences {
        let skel = sample_skeleton(&mut rng, None);
        let num = Num::random(&mut rng);
        trees.push(realize(&skel, num, num)?);
    }
    Ok(trees)
}

/// Generates a corpus (trees plus vocabulary) from the agreement grammar.
pub fn generate_corpus(sentences: usize, seed: u64) -> Result<Corpus, TreebankError> {
    Ok(Corpus::from_trees(generate_trees(sentences, seed)?, 1))
}

/// Generates lemma-matched agreement pairs in mirrored twins.
///
/// Each sampled skeleton yields two pairs: one with a singular subject and
/// one with a plural subject. Roughly half the skeletons carry a distractor
/// PP whose noun disagrees with the subject (tag `"distractor"`); the rest
/// have no subject PP (tag `"simple"`).
pub fn generate_pairs(pairs: usize, seed: u64) -> Result<Vec<AgreementPair>, TreebankError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(pairs);
    while out.len() < pairs {
        let with_pp = rng.random::<f64>() < 0.5;
        let skel = sample_skeleton(&mut rng, Some(with_pp));
        let tag = if with_pp { "distractor" } else { "simple" };
        for subj_num in [Num::Sg, Num::Pl] {
            if out.len() >= pairs {
                break;
            }
            out.push(AgreementPair {
                tag: tag.to_string(),
                good: realize(&skel, subj_num, subj_num)?,
                bad: realize(&skel, subj_num, subj_num.flip())?,
            });
        }
    }
    Ok(out)
}

/// All surface forms the grammar can emit, in a stable order.
pub fn lexicon() -> Vec<&'static str> {
    let mut forms = Vec::new();
    forms.extend_from_slice(&DETERMINERS);
    forms.extend_from_slice(&SG_NOUNS);
    forms.extend_from_slice(&PL_NOUNS);
    forms.extend_from_slice(&SG_INTRANS);
    forms.extend_from_slice(&PL_INTRANS);
    forms.extend_from_slice(&SG_TRANS);
    forms.extend_from_slice(&PL_TRANS);
    forms.extend_from_slice(&PREPOSITIONS);
    forms.extend_from_slice(&ADVERBS);
    forms
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn is_noun(form: &str) -> Option<Num> {
        if SG_NOUNS.contains(&form) {
            Some(Num::Sg)
        } else if PL_NOUNS.contains(&form) {
            Some(Num::Pl)
        } else {
            None
        }
    }

    fn verb_number(form: &str) -> Option<Num> {
        if SG_INTRANS.contains(&form) || SG_TRANS.contains(&form) {
            Some(Num::Sg)
        } else if PL_INTRANS.contains(&form) || PL_TRANS.contains(&form) {
            Some(Num::Pl)
        } else {
            None
        }
    }

    /// The subject is the noun that depends directly on the root verb from
    /// the left.
    fn subject_number(tree: &DepTree) -> Num {
        let root = tree.heads().iter().position(|&h| h == 0).unwrap() + 1;
        for i in 1..root {
            if tree.heads()[i - 1] == root {
                if let Some(num) = is_noun(tree.form(i)) {
                    return num;
                }
            }
        }
        panic!("no subject noun in {:?}", tree.text());
    }

    #[test]
    fn same_seed_reproduces_the_corpus() {
        let a = generate_trees(50, 7).unwrap();
        let b = generate_trees(50, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_trees(50, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn trees_are_projective_with_bounded_lengths_and_known_words() {
        let lex: HashSet<&str> = lexicon().into_iter().collect();
        for tree in generate_trees(300, 1).unwrap() {
            assert!(tree.is_projective(), "non-projective: {}", tree.text());
            assert!(
                (4..=12).contains(&tree.len()),
                "length {} out of range: {}",
                tree.len(),
                tree.text()
            );
            for tok in tree.tokens() {
                assert!(lex.contains(tok.form.as_str()), "unknown form {}", tok.form);
            }
        }
    }

    #[test]
    fn corpus_verbs_agree_with_their_subjects() {
        for tree in generate_trees(300, 2).unwrap() {
            let root = tree.heads().iter().position(|&h| h == 0).unwrap() + 1;
            let vnum = verb_number(tree.form(root)).expect("root is a verb");
            assert_eq!(vnum, subject_number(&tree), "disagreement in {}", tree.text());
        }
    }

    #[test]
    fn pairs_flip_exactly_the_verb_form() {
        for pair in generate_pairs(100, 3).unwrap() {
            assert_eq!(pair.good.heads(), pair.bad.heads());
            let diff: Vec<usize> = (1..=pair.good.len())
                .filter(|&i| pair.good.form(i) != pair.bad.form(i))
                .collect();
            assert_eq!(diff.len(), 1, "pair differs at {:?}", diff);
            let pos = diff[0];
            assert_eq!(pair.good.heads()[pos - 1], 0, "changed word is not the root verb");
            let good_num = verb_number(pair.good.form(pos)).unwrap();
            let bad_num = verb_number(pair.bad.form(pos)).unwrap();
            assert_eq!(good_num.flip(), bad_num);
            assert_eq!(good_num, subject_number(&pair.good));
        }
    }

    #[test]
    fn pairs_come_in_mirrored_number_twins() {
        let pairs = generate_pairs(200, 4).unwrap();
        let sg = pairs
            .iter()
            .filter(|p| subject_number(&p.good) == Num::Sg)
            .count();
        assert_eq!(sg, 100);
        // Mirrored twins are adjacent and share lemmas: same length and the
        // same head vector.
        for twin in pairs.chunks(2) {
            assert_eq!(twin[0].good.heads(), twin[1].good.heads());
            assert_eq!(twin[0].tag, twin[1].tag);
        }
    }

    #[test]
    fn distractor_pairs_embed_an_opposite_number_noun() {
        let pairs = generate_pairs(200, 5).unwrap();
        let mut saw_distractor = false;
        for pair in &pairs {
            if pair.tag != "distractor" {
                continue;
            }
            saw_distractor = true;
            let subj = subject_number(&pair.good);
            let root = pair.good.heads().iter().position(|&h| h == 0).unwrap() + 1;
            // A noun strictly between the subject and the verb must carry
            // the opposite number.
            let inner: Vec<Num> = (1..root)
                .filter_map(|i| is_noun(pair.good.form(i)))
                .collect();
            assert_eq!(inner.len(), 2, "expected subject plus distractor noun");
            assert_eq!(inner[1], subj.flip(), "distractor in {}", pair.good.text());
        }
        assert!(saw_distractor);
    }
}
