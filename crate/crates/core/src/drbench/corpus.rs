//! Synthetic samples for the toy backend.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{build_prompt, QuestionType, SampleRecord};
use crate::engine::toy::ToyImage;

const OBJECTS: [&str; 12] = [
    "cat", "dog", "bicycle", "lamp", "kettle", "umbrella", "guitar", "bench", "clock", "boat", "apple", "ladder",
];

pub const TOY_MCQ_DATASET: &str = "toy-scenes";
pub const TOY_YESNO_DATASET: &str = "toy-yesno";

/// `count` samples: three multiple-choice questions for every yes/no one.
pub fn toy_corpus(count: usize, seed: u64) -> Vec<SampleRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let scene = format!("scene-{i:04}");
            if i % 4 == 3 {
                yes_no(&mut rng, i, scene)
            } else {
                mcq(&mut rng, i, scene)
            }
        })
        .collect()
}

fn mcq(rng: &mut ChaCha8Rng, i: usize, scene: String) -> SampleRecord {
    let options: Vec<String> = OBJECTS.choose_multiple(rng, 4).map(|s| s.to_string()).collect();
    let gt = rng.random_range(0..4u8);
    let letter = char::from(b'A' + gt).to_string();
    let question = format!("Which object is in {scene}?");
    SampleRecord {
        v: 1,
        id: format!("toy-{i:04}"),
        dataset: TOY_MCQ_DATASET.into(),
        question_type: QuestionType::Mcq,
        image: ToyImage::new(scene, letter.clone()).to_ref(),
        prompt: build_prompt(&question, QuestionType::Mcq, Some(&options), false),
        options: Some(options),
        gt_answer: letter,
    }
}

fn yes_no(rng: &mut ChaCha8Rng, i: usize, scene: String) -> SampleRecord {
    let object = OBJECTS.choose(rng).expect("non-empty");
    let yes = rng.random_bool(0.5);
    let question = format!("Is there a {object} in {scene}?");
    SampleRecord {
        v: 1,
        id: format!("toy-{i:04}"),
        dataset: TOY_YESNO_DATASET.into(),
        question_type: QuestionType::Others,
        image: ToyImage::new(scene, if yes { "Yes" } else { "No" }).to_ref(),
        prompt: build_prompt(&question, QuestionType::Others, None, true),
        options: None,
        gt_answer: if yes { "yes" } else { "no" }.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_seeded_and_mixed() {
        let a = toy_corpus(40, 3);
        assert_eq!(a, toy_corpus(40, 3));
        assert_ne!(a, toy_corpus(40, 4));
        assert_eq!(a.iter().filter(|s| s.question_type == QuestionType::Others).count(), 10);
        for s in &a {
            assert!(s.prompt.starts_with("Question: "));
            if let Some(o) = &s.options {
                assert_eq!(o.len(), 4);
                assert!(["A", "B", "C", "D"].contains(&s.gt_answer.as_str()));
            }
        }
    }
}
