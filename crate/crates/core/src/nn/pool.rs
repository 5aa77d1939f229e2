use super::{NnError, Result, Tensor};

/// Output shape of a max pool over `[C, L, X, Y]`.
pub fn pool_output_shape(input: &[usize], size: [usize; 3], stride: [usize; 3]) -> Result<[usize; 4]> {
    if input.len() != 4 {
        return Err(NnError::Shape(format!("maxpool3d input must be rank 4, got {input:?}")));
    }
    if size.iter().chain(&stride).any(|&k| k == 0) {
        return Err(NnError::Shape(format!("pool size {size:?} and stride {stride:?} must be >= 1")));
    }
    let mut out = [input[0], 0, 0, 0];
    for i in 0..3 {
        if size[i] > input[i + 1] {
            return Err(NnError::Shape(format!(
                "pool window {} larger than input axis {} of size {}",
                size[i],
                i,
                input[i + 1]
            )));
        }
        out[i + 1] = (input[i + 1] - size[i]) / stride[i] + 1;
    }
    Ok(out)
}

/// Max pooling; returns the pooled tensor and the flat input index of each
/// maximum. Ties go to the lowest flat index.
pub fn maxpool3d(volume: &Tensor, size: [usize; 3], stride: [usize; 3]) -> Result<(Tensor, Vec<usize>)> {
    let out_shape = pool_output_shape(volume.shape(), size, stride)?;
    let s = volume.shape();
    let (l_in, x_in, y_in) = (s[1], s[2], s[3]);
    let [c_n, lo, xo, yo] = out_shape;
    let v = volume.data();
    let mut out = Vec::with_capacity(c_n * lo * xo * yo);
    let mut idx = Vec::with_capacity(out.capacity());
    for c in 0..c_n {
        for l in 0..lo {
            for x in 0..xo {
                for y in 0..yo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for dt in 0..size[0] {
                        let il = l * stride[0] + dt;
                        for dh in 0..size[1] {
                            let ix = x * stride[1] + dh;
                            let base = ((c * l_in + il) * x_in + ix) * y_in + y * stride[2];
                            for dw in 0..size[2] {
                                let i = base + dw;
                                if v[i] > best || best_i == usize::MAX {
                                    best = v[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    out.push(best);
                    idx.push(best_i);
                }
            }
        }
    }
    Ok((Tensor::from_raw(&out_shape, out), idx))
}

/// Route each output gradient to its argmax cell.
pub fn maxpool3d_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(NnError::Shape(format!(
            "maxpool3d backward: {} gradients for {} indices",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut g = Tensor::zeros(input_shape);
    let n = g.len();
    let gd = g.data_mut();
    for (&i, &go) in argmax.iter().zip(grad_out.data()) {
        if i >= n {
            return Err(NnError::Shape(format!("argmax index {i} outside input of {n} values")));
        }
        gd[i] += go;
    }
    Ok(g)
}
