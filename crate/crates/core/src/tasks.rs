//! Synthetic tasks with exact, binary, verifiable rewards.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Rng};

pub const PAD: usize = 0;
/// Begin-of-thinking marker; closes every prompt.
pub const BOS: usize = 1;
/// End-of-thinking control token.
pub const EOT: usize = 2;
/// End-of-answer.
pub const EOS: usize = 3;
pub const DIGIT_BASE: usize = 4;
pub const PLUS: usize = 14;
pub const TIMES: usize = 15;
pub const SEP: usize = 16;
/// Smallest vocabulary that can express every task.
pub const TASK_VOCAB_MIN: usize = 17;

const RESERVED: [&str; 4] = ["<pad>", "<think>", "</think>", "<eos>"];

/// Token ids and their printable forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    size: usize,
}

impl Vocabulary {
    pub fn new(size: usize) -> Result<Self> {
        if size < RESERVED.len() {
            return Err(Error::Parameter(format!("vocabulary of {size} cannot hold the 4 control tokens")));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn supports_tasks(&self) -> bool {
        self.size >= TASK_VOCAB_MIN
    }

    pub fn digit(d: usize) -> usize {
        debug_assert!(d < 10);
        DIGIT_BASE + d
    }

    pub fn token_text(&self, id: usize) -> Result<String> {
        if id >= self.size {
            return Err(Error::TokenRange { id, vocab: self.size });
        }
        Ok(match id {
            0..=3 => RESERVED[id].to_string(),
            DIGIT_BASE..=13 if self.supports_tasks() => (id - DIGIT_BASE).to_string(),
            PLUS if self.supports_tasks() => "+".into(),
            TIMES if self.supports_tasks() => "*".into(),
            SEP if self.supports_tasks() => "|".into(),
            _ => format!("<t{id}>"),
        })
    }
}

/// Base-10 digit tokens, most significant first.
pub fn encode(mut value: u64) -> Vec<usize> {
    let mut out = Vec::new();
    loop {
        out.push(Vocabulary::digit((value % 10) as usize));
        value /= 10;
        if value == 0 {
            break;
        }
    }
    out.reverse();
    out
}

/// Inverse of [`encode`].
pub fn decode(tokens: &[usize]) -> Result<u64> {
    if tokens.is_empty() {
        return Err(Error::Decode("empty digit sequence".into()));
    }
    let mut v: u64 = 0;
    for &t in tokens {
        if !(DIGIT_BASE..DIGIT_BASE + 10).contains(&t) {
            return Err(Error::Decode(format!("token {t} is not a digit")));
        }
        v = v
            .checked_mul(10)
            .and_then(|v| v.checked_add((t - DIGIT_BASE) as u64))
            .ok_or_else(|| Error::Decode("value overflows u64".into()))?;
    }
    Ok(v)
}

fn encode_fixed(value: u64, width: usize) -> Vec<usize> {
    let digits = encode(value);
    let mut out = vec![Vocabulary::digit(0); width.saturating_sub(digits.len())];
    out.extend(digits);
    out
}

fn width_for(modulus: u64) -> usize {
    encode(modulus - 1).len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Copy,
    Reverse,
    ModularAdd,
    ChainApply,
}

/// A task family with its difficulty parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Copy { length: usize },
    Reverse { length: usize },
    ModularAdd { modulus: u64 },
    /// `depth` affine maps `x -> a x + b (mod modulus)` applied left to right.
    ChainApply { depth: usize, modulus: u64 },
}

impl TaskSpec {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskSpec::Copy { .. } => TaskKind::Copy,
            TaskSpec::Reverse { .. } => TaskKind::Reverse,
            TaskSpec::ModularAdd { .. } => TaskKind::ModularAdd,
            TaskSpec::ChainApply { .. } => TaskKind::ChainApply,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TaskSpec::Copy { length } | TaskSpec::Reverse { length } => {
                if !(1..=32).contains(&length) {
                    return Err(Error::Parameter(format!("sequence length {length} outside 1..=32")));
                }
            }
            TaskSpec::ModularAdd { modulus } => {
                if !(2..=100).contains(&modulus) {
                    return Err(Error::Parameter(format!("modulus {modulus} outside 2..=100")));
                }
            }
            TaskSpec::ChainApply { depth, modulus } => {
                if !(1..=6).contains(&depth) {
                    return Err(Error::Parameter(format!("chain depth {depth} outside 1..=6")));
                }
                if !(2..=100).contains(&modulus) {
                    return Err(Error::Parameter(format!("modulus {modulus} outside 2..=100")));
                }
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TaskSpec::Copy { length } => write!(f, "copy:{length}"),
            TaskSpec::Reverse { length } => write!(f, "reverse:{length}"),
            TaskSpec::ModularAdd { modulus } => write!(f, "modular_add:{modulus}"),
            TaskSpec::ChainApply { depth, modulus } => write!(f, "chain_apply:{depth}:{modulus}"),
        }
    }
}

/// Parses `copy:LEN`, `reverse:LEN`, `modular_add:M` and `chain_apply:DEPTH:M`.
impl std::str::FromStr for TaskSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<u64> {
            parts
                .get(i)
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| Error::Config(format!("bad task spec `{s}`")))
        };
        let spec = match (parts[0], parts.len()) {
            ("copy", 2) => TaskSpec::Copy { length: num(1)? as usize },
            ("reverse", 2) => TaskSpec::Reverse { length: num(1)? as usize },
            ("modular_add", 2) => TaskSpec::ModularAdd { modulus: num(1)? },
            ("chain_apply", 3) => TaskSpec::ChainApply { depth: num(1)? as usize, modulus: num(2)? },
            _ => return Err(Error::Config(format!("bad task spec `{s}`"))),
        };
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }
}

/// A question `q` with its ground-truth answer `y*`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: u64,
    pub spec: TaskSpec,
    pub prompt_tokens: Vec<usize>,
    pub ground_truth: Vec<usize>,
    /// A worked thinking trace used for supervised pretraining.
    pub reference_thinking: Vec<usize>,
}

impl TaskInstance {
    pub fn kind(&self) -> TaskKind {
        self.spec.kind()
    }

    /// Full supervised sequence `q ++ thinking ++ EOT ++ y* ++ EOS` as
    /// `(input, targets)`, with prompt targets masked to [`PAD`].
    pub fn supervised_pair(&self) -> (Vec<usize>, Vec<usize>) {
        let mut full = self.prompt_tokens.clone();
        full.extend(&self.reference_thinking);
        full.push(EOT);
        full.extend(&self.ground_truth);
        full.push(EOS);
        let input = full[..full.len() - 1].to_vec();
        let mut targets = full[1..].to_vec();
        let masked = self.prompt_tokens.len() - 1;
        targets[..masked].iter_mut().for_each(|t| *t = PAD);
        (input, targets)
    }
}

fn digits(rng: &mut Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| Vocabulary::digit(rng.gen_range(0..10))).collect()
}

/// Draws one instance; identical `(spec, seed, id)` give identical instances.
pub fn generate(spec: TaskSpec, seed: u64, id: u64) -> Result<TaskInstance> {
    spec.validate()?;
    let mut rng = substream(seed, id, 0x7A5C);
    let mut thinking = Vec::new();
    let (mut prompt, truth) = match spec {
        TaskSpec::Copy { length } => {
            let p = digits(&mut rng, length);
            (p.clone(), p)
        }
        TaskSpec::Reverse { length } => {
            let p = digits(&mut rng, length);
            let mut r = p.clone();
            r.reverse();
            (p, r)
        }
        TaskSpec::ModularAdd { modulus } => {
            let a = rng.gen_range(0..modulus);
            let b = rng.gen_range(0..modulus);
            let mut p = encode(a);
            p.push(PLUS);
            p.extend(encode(b));
            (p, encode((a + b) % modulus))
        }
        TaskSpec::ChainApply { depth, modulus } => {
            let w = width_for(modulus);
            let mut x = rng.gen_range(0..modulus);
            let mut p = encode_fixed(x, w);
            for step in 0..depth {
                let a = rng.gen_range(1..modulus);
                let b = rng.gen_range(0..modulus);
                p.push(TIMES);
                p.extend(encode_fixed(a, w));
                p.push(PLUS);
                p.extend(encode_fixed(b, w));
                x = (a * x + b) % modulus;
                if step + 1 < depth {
                    thinking.extend(encode_fixed(x, w));
                }
            }
            (p, encode_fixed(x, w))
        }
    };
    prompt.push(BOS);
    Ok(TaskInstance { id, spec, prompt_tokens: prompt, ground_truth: truth, reference_thinking: thinking })
}

/// `n` instances with consecutive ids starting at `first_id`.
pub fn generate_set(spec: TaskSpec, seed: u64, first_id: u64, n: usize) -> Result<Vec<TaskInstance>> {
    (0..n as u64).map(|i| generate(spec, seed, first_id + i)).collect()
}

/// Answer with everything from the first EOS on, and trailing padding, removed.
pub fn strip_answer(answer: &[usize]) -> &[usize] {
    let end = answer.iter().position(|&t| t == EOS).unwrap_or(answer.len());
    let mut s = &answer[..end];
    while let [rest @ .., PAD] = s {
        s = rest;
    }
    s
}

/// Exact-match reward in `{0, 1}`.
pub fn verify(answer: &[usize], instance: &TaskInstance) -> f64 {
    if strip_answer(answer) == instance.ground_truth.as_slice() {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spec_text_round_trip() {
        for spec in [
            TaskSpec::Copy { length: 4 },
            TaskSpec::Reverse { length: 7 },
            TaskSpec::ModularAdd { modulus: 10 },
            TaskSpec::ChainApply { depth: 3, modulus: 10 },
        ] {
            assert_eq!(spec.to_string().parse::<TaskSpec>().unwrap(), spec);
        }
        for bad in ["copy", "copy:x", "chain_apply:3", "chain_apply:9:10", "add:3", ""] {
            assert!(bad.parse::<TaskSpec>().is_err(), "{bad}");
        }
    }

    const CHAIN: TaskSpec = TaskSpec::ChainApply { depth: 3, modulus: 10 };

    /// Independent evaluator: reads the prompt's tokens back into numbers and
    /// applies the maps in order.
    fn interpret_chain(prompt: &[usize], modulus: u64) -> u64 {
        let w = encode(modulus - 1).len();
        let num = |s: &[usize]| s.iter().fold(0u64, |acc, &t| acc * 10 + (t - DIGIT_BASE) as u64);
        let mut x = num(&prompt[..w]);
        let mut i = w;
        while prompt[i] != BOS {
            assert_eq!(prompt[i], TIMES);
            let a = num(&prompt[i + 1..i + 1 + w]);
            assert_eq!(prompt[i + 1 + w], PLUS);
            let b = num(&prompt[i + 2 + w..i + 2 + 2 * w]);
            x = (a * x + b) % modulus;
            i += 2 + 2 * w;
        }
        x
    }

    #[test]
    fn copy_and_reverse_ground_truth() {
        let t = generate(TaskSpec::Copy { length: 3 }, 1, 0).unwrap();
        assert_eq!(t.prompt_tokens.len(), 4);
        assert_eq!(&t.prompt_tokens[..3], t.ground_truth.as_slice());
        assert_eq!(*t.prompt_tokens.last().unwrap(), BOS);
        let r = generate(TaskSpec::Reverse { length: 5 }, 1, 0).unwrap();
        let mut p = r.prompt_tokens[..5].to_vec();
        p.reverse();
        assert_eq!(p, r.ground_truth);
    }

    #[test]
    fn modular_add_ground_truth() {
        for id in 0..200 {
            let t = generate(TaskSpec::ModularAdd { modulus: 10 }, 3, id).unwrap();
            let plus = t.prompt_tokens.iter().position(|&x| x == PLUS).unwrap();
            let a = decode(&t.prompt_tokens[..plus]).unwrap();
            let b = decode(&t.prompt_tokens[plus + 1..t.prompt_tokens.len() - 1]).unwrap();
            assert_eq!(decode(&t.ground_truth).unwrap(), (a + b) % 10);
        }
        // 7 + 5 mod 10 tokenizes to the single digit 2
        assert_eq!(encode((7 + 5) % 10), vec![Vocabulary::digit(2)]);
    }

    #[test]
    fn chain_apply_matches_interpreter() {
        for modulus in [7, 10, 37, 100] {
            for id in 0..100 {
                let t = generate(TaskSpec::ChainApply { depth: 3, modulus }, 5, id).unwrap();
                let w = encode(modulus - 1).len();
                let truth = t.ground_truth.iter().fold(0u64, |a, &d| a * 10 + (d - DIGIT_BASE) as u64);
                assert_eq!(t.ground_truth.len(), w);
                assert_eq!(truth, interpret_chain(&t.prompt_tokens, modulus));
                assert_eq!(t.reference_thinking.len(), 2 * w);
            }
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(generate(TaskSpec::ChainApply { depth: 7, modulus: 10 }, 0, 0).is_err());
        assert!(generate(TaskSpec::ChainApply { depth: 2, modulus: 101 }, 0, 0).is_err());
        assert!(generate(TaskSpec::ModularAdd { modulus: 1 }, 0, 0).is_err());
        assert!(generate(TaskSpec::Copy { length: 0 }, 0, 0).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate(CHAIN, 9, 4).unwrap(), generate(CHAIN, 9, 4).unwrap());
        assert_ne!(generate(CHAIN, 9, 4).unwrap(), generate(CHAIN, 9, 5).unwrap());
    }

    #[test]
    fn verify_rewards() {
        let t = generate(CHAIN, 2, 0).unwrap();
        assert_eq!(verify(&t.ground_truth, &t), 1.0);
        let mut with_eos = t.ground_truth.clone();
        with_eos.push(EOS);
        assert_eq!(verify(&with_eos, &t), 1.0);
        with_eos.push(PAD);
        assert_eq!(verify(&with_eos, &t), 1.0);
        let mut off = t.ground_truth.clone();
        off[0] = Vocabulary::digit((off[0] - DIGIT_BASE + 1) % 10);
        assert_eq!(verify(&off, &t), 0.0);
        assert_eq!(verify(&[], &t), 0.0);
    }

    #[test]
    fn encode_decode_examples() {
        assert_eq!(encode(42), vec![Vocabulary::digit(4), Vocabulary::digit(2)]);
        assert_eq!(decode(&encode(42)).unwrap(), 42);
        assert_eq!(encode(0), vec![Vocabulary::digit(0)]);
        assert!(matches!(decode(&[EOS]), Err(Error::Decode(_))));
        assert!(decode(&[]).is_err());
    }

    #[test]
    fn encode_decode_fuzz() {
        let mut rng = crate::rng::seeded(77);
        for _ in 0..10_000 {
            let x: u64 = match rng.gen_range(0..3) {
                0 => rng.gen_range(0..100),
                1 => rng.gen_range(0..1_000_000),
                _ => rng.gen(),
            };
            assert_eq!(decode(&encode(x)).unwrap(), x);
        }
    }

    #[test]
    fn supervised_pair_layout() {
        let t = generate(CHAIN, 1, 1).unwrap();
        let (input, targets) = t.supervised_pair();
        assert_eq!(input.len(), targets.len());
        let p = t.prompt_tokens.len();
        assert!(targets[..p - 1].iter().all(|&x| x == PAD));
        assert_eq!(targets[p - 1], t.reference_thinking[0]);
        assert_eq!(*targets.last().unwrap(), EOS);
        assert_eq!(input[p + t.reference_thinking.len()], EOT);
    }

    #[test]
    fn token_text() {
        let v = Vocabulary::new(32).unwrap();
        assert_eq!(v.token_text(EOT).unwrap(), "</think>");
        assert_eq!(v.token_text(Vocabulary::digit(7)).unwrap(), "7");
        assert_eq!(v.token_text(20).unwrap(), "<t20>");
        assert!(v.token_text(32).is_err());
        let small = Vocabulary::new(4).unwrap();
        assert_eq!(small.token_text(1).unwrap(), "<think>");
        assert!(Vocabulary::new(3).is_err());
    }

    proptest! {
        #[test]
        fn ground_truth_always_verifies_and_corruption_never_does(
            seed in 0u64..1000, id in 0u64..1000, which in 0usize..4, pos in 0usize..8, delta in 1usize..10,
        ) {
            let spec = [
                TaskSpec::Copy { length: 5 },
                TaskSpec::Reverse { length: 4 },
                TaskSpec::ModularAdd { modulus: 97 },
                TaskSpec::ChainApply { depth: 4, modulus: 37 },
            ][which];
            let t = generate(spec, seed, id).unwrap();
            prop_assert_eq!(verify(&t.ground_truth, &t), 1.0);
            let mut bad = t.ground_truth.clone();
            let i = pos % bad.len();
            bad[i] = Vocabulary::digit((bad[i] - DIGIT_BASE + delta) % 10);
            prop_assert_eq!(verify(&bad, &t), 0.0);
        }
    }
}
