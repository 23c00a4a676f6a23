use crate::types::ViewImage;

/// Four views in `ViewKind::ALL` order with a class label.
#[derive(Debug, Clone, Copy)]
pub struct LabeledViews<'a> {
    pub views: &'a [ViewImage; 4],
    pub label: usize,
}

impl<'a> LabeledViews<'a> {
    pub fn new(views: &'a [ViewImage; 4], label: usize) -> Self {
        Self { views, label }
    }
}

/// Mini-batch schedule: a seeded permutation cut into chunks.
pub(crate) fn batches<R: rand::Rng + ?Sized>(
    n: usize,
    batch_size: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}
