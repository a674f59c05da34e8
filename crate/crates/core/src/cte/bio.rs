use spatex_nn::Constraints;

use crate::corpus::{ElementKind, SpatialRole};

/// A BIO label set over `types`: tag 0 is `O`, tag `1 + 2k` is `B-k` and
/// tag `2 + 2k` is `I-k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagScheme {
    types: Vec<&'static str>,
}

pub const OUTSIDE: usize = 0;

impl TagScheme {
    pub fn new(types: Vec<&'static str>) -> Self {
        Self { types }
    }

    /// Element kinds, 17 tags.
    pub fn elements() -> Self {
        Self::new(ElementKind::ALL.iter().map(|k| k.tag()).collect())
    }

    /// Roles, 11 tags.
    pub fn roles() -> Self {
        Self::new(SpatialRole::TAGGED.iter().map(|r| r.name()).collect())
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    pub fn num_tags(&self) -> usize {
        1 + 2 * self.types.len()
    }

    pub fn begin(&self, ty: usize) -> usize {
        1 + 2 * ty
    }

    pub fn inside(&self, ty: usize) -> usize {
        2 + 2 * ty
    }

    /// `(is_begin, type)` of a non-O tag.
    pub fn decode(&self, tag: usize) -> Option<(bool, usize)> {
        (tag != OUTSIDE).then(|| ((tag - 1).is_multiple_of(2), (tag - 1) / 2))
    }

    pub fn label(&self, tag: usize) -> String {
        match self.decode(tag) {
            None => "O".into(),
            Some((true, ty)) => format!("B-{}", self.types[ty]),
            Some((false, ty)) => format!("I-{}", self.types[ty]),
        }
    }

    pub fn can_follow(&self, prev: Option<usize>, tag: usize) -> bool {
        match self.decode(tag) {
            None | Some((true, _)) => true,
            Some((false, ty)) => match prev.and_then(|p| self.decode(p)) {
                Some((_, pty)) => pty == ty,
                None => false,
            },
        }
    }

    pub fn is_valid(&self, tags: &[usize]) -> bool {
        tags.iter().all(|&t| t < self.num_tags())
            && tags
                .iter()
                .enumerate()
                .all(|(i, &t)| self.can_follow(i.checked_sub(1).map(|j| tags[j]), t))
    }

    pub fn constraints(&self) -> Constraints {
        let k = self.num_tags();
        Constraints {
            start: (0..k).map(|t| self.can_follow(None, t)).collect(),
            allowed: (0..k)
                .map(|from| (0..k).map(|to| self.can_follow(Some(from), to)).collect())
                .collect(),
        }
    }

    /// Tag sequence for non-overlapping typed spans `(start, end, type)`.
    /// Spans overlapping an earlier one are skipped.
    pub fn encode(&self, n: usize, spans: &[(usize, usize, usize)]) -> Vec<usize> {
        let mut tags = vec![OUTSIDE; n];
        let mut taken = vec![false; n];
        for &(s, e, ty) in spans {
            if s >= e || e > n || taken[s..e].iter().any(|&x| x) {
                continue;
            }
            tags[s] = self.begin(ty);
            for t in &mut tags[s + 1..e] {
                *t = self.inside(ty);
            }
            for x in &mut taken[s..e] {
                *x = true;
            }
        }
        tags
    }

    /// Typed spans of a tag sequence. A stray `I-` opens a new span.
    pub fn spans(&self, tags: &[usize]) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        let mut open: Option<(usize, usize)> = None;
        for (i, &t) in tags.iter().enumerate() {
            match self.decode(t) {
                None => {
                    if let Some((s, ty)) = open.take() {
                        out.push((s, i, ty));
                    }
                }
                Some((begin, ty)) => {
                    let continues = !begin && matches!(open, Some((_, oty)) if oty == ty);
                    if !continues {
                        if let Some((s, oty)) = open.take() {
                            out.push((s, i, oty));
                        }
                        open = Some((i, ty));
                    }
                }
            }
        }
        if let Some((s, ty)) = open {
            out.push((s, tags.len(), ty));
        }
        out
    }
}
