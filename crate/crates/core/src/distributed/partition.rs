/// Block partition of `total` elements over `nranks`: the first
/// `total % nranks` ranks get one extra element. Returns the 0-based
/// `(start, size)` of `rank`.
pub fn partition(total: usize, nranks: usize, rank: usize) -> (usize, usize) {
    assert!(nranks > 0 && rank < nranks, "partition: rank {rank} out of 0..{nranks}");
    let base = total / nranks;
    let rem = total % nranks;
    let size = base + usize::from(rank < rem);
    let start = rank * base + rank.min(rem);
    (start, size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_and_uneven() {
        assert_eq!(partition(100, 4, 2), (50, 25));
        let got: Vec<_> = (0..4).map(|r| partition(10, 4, r)).collect();
        assert_eq!(got, vec![(0, 3), (3, 3), (6, 2), (8, 2)]);
        assert_eq!(partition(0, 4, 0), (0, 0));
    }
}
