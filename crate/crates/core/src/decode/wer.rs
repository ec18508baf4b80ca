use serde::{Deserialize, Serialize};

/// Edit counts of a hypothesis against a reference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WerCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_words: usize,
}

impl WerCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    /// Word error rate in percent. An empty reference counts as one word.
    pub fn percent(&self) -> f64 {
        if self.errors() == 0 {
            return 0.0;
        }
        100.0 * self.errors() as f64 / self.ref_words.max(1) as f64
    }

    pub fn add(&mut self, other: &WerCounts) {
        self.substitutions += other.substitutions;
        self.insertions += other.insertions;
        self.deletions += other.deletions;
        self.ref_words += other.ref_words;
    }
}

/// Minimum edit-distance alignment of word sequences. Among optimal
/// alignments, matches and substitutions are preferred over deletions, then
/// insertions.
pub fn wer<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> WerCounts {
    let (n, m) = (reference.len(), hyp.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    d[0] = (0..=m).collect();
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1].as_ref() != hyp[j - 1].as_ref());
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut c = WerCounts {
        ref_words: n,
        ..WerCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == hyp[j - 1].as_ref();
            if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
                c.substitutions += usize::from(!same);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    c
}

/// [`wer`] on whitespace-separated strings.
pub fn wer_text(hyp: &str, reference: &str) -> WerCounts {
    let h: Vec<&str> = hyp.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    wer(&h, &r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        let c = wer_text("a b c", "a b c");
        assert_eq!(c.percent(), 0.0);
        let c = wer_text("a x c d", "a b c");
        assert_eq!((c.substitutions, c.insertions, c.deletions), (1, 1, 0));
        assert!((c.percent() - 200.0 / 3.0).abs() < 1e-12);
        let c = wer_text("", "one two three four");
        assert_eq!((c.deletions, c.percent()), (4, 100.0));
        assert_eq!(wer_text("", "").percent(), 0.0);
    }
}
