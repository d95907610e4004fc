use gatedseg::Tensor;

/// Direct gather: each dilated tap of the folded kernel reads one 2×2 block
/// of the original map.
pub fn gather_oracle(x: &Tensor, w: &Tensor, b: &Tensor, rate: usize) -> Tensor {
    let s = x.shape();
    let k = w.shape().h as isize;
    let pix = |c: usize, y: isize, xx: isize| {
        if y < 0 || xx < 0 || y >= s.h as isize || xx >= s.w as isize {
            0.0
        } else {
            x.get(0, c, y as usize, xx as usize)
        }
    };
    Tensor::from_fn([1, w.shape().n / 4, s.h, s.w], |_, co, y, xx| {
        let p = 2 * (y % 2) + xx % 2;
        let fo = 4 * co + p;
        let (fy, fx) = ((y / 2) as isize, (xx / 2) as isize);
        let mut acc = b.get(fo, 0, 0, 0);
        for ci in 0..s.c {
            for q in 0..4 {
                for ky in 0..k {
                    for kx in 0..k {
                        let by = fy + (ky - k / 2) * rate as isize;
                        let bx = fx + (kx - k / 2) * rate as isize;
                        let v = pix(ci, 2 * by + (q / 2) as isize, 2 * bx + (q % 2) as isize);
                        acc += w.get(fo, 4 * ci + q, ky as usize, kx as usize) * v;
                    }
                }
            }
        }
        acc
    })
}
