//! Reverse-mode pass.
//!
//! Walks the node list backwards keeping a running gradient of the metric
//! with respect to the residual stream. The gradient recorded for a
//! destination port is taken at the port's pre-layernorm residual input —
//! exactly what an edge score dots a contribution delta against.

use ndarray::{Array2, Axis};

use super::forward::{head_trace_index, Trace};
use super::math::{gelu_prime, layer_norm_backward};
use super::{Gradients, ParamGrads, Weights};
use crate::graph::{DestPort, Qkv};

pub(crate) fn run(w: &Weights, trace: &Trace, dlogits: &Array2<f64>) -> Gradients {
    let c = &w.config;
    let topology = w.topology();
    let s = trace.tokens.len();
    let scale = 1.0 / (c.d_head as f64).sqrt();
    let mut params = ParamGrads::zeros(c);
    let mut port_grads: Vec<Array2<f64>> =
        vec![Array2::zeros((0, 0)); topology.port_count()];

    // logits node: unembedding, then the optional final layernorm
    let dx_final = dlogits.dot(&w.unembed.t());
    {
        let pt = params.tensors_mut();
        pt.unembed += &trace.final_out.x.t().dot(dlogits);
    }
    let d_logits_port = match (&w.final_ln, &trace.final_out.y, &trace.final_out.inv_std) {
        (Some(ln), Some(y), Some(inv_std)) => {
            {
                let pt = params.tensors_mut();
                let fln = pt.final_ln.as_mut().expect("config has final layernorm");
                fln.scale += &(&dx_final * y).sum_axis(Axis(0));
                fln.shift += &dx_final.sum_axis(Axis(0));
            }
            let dy = &dx_final * &ln.scale;
            layer_norm_backward(&dy.view(), &y.view(), inv_std)
        }
        _ => dx_final,
    };
    let logits_port = topology.port_index(DestPort::Logits);
    let mut residual_grad = d_logits_port.clone();
    port_grads[logits_port] = d_logits_port;

    for layer in (0..c.n_layers).rev() {
        // MLP first: it sits after the heads in computation order
        let lw = &w.layers[layer];
        let mt = &trace.mlps[layer];
        let g = &residual_grad;
        let da = g.dot(&lw.mlp_out.t());
        let mut dpre = da;
        dpre.zip_mut_with(&mt.pre, |d, &p| *d *= gelu_prime(p));
        {
            let pt = params.tensors_mut();
            pt.layers[layer].mlp_out += &mt.act.t().dot(g);
            pt.layers[layer].mlp_out_bias += &g.sum_axis(Axis(0));
            pt.layers[layer].mlp_in += &mt.x.t().dot(&dpre);
            pt.layers[layer].mlp_in_bias += &dpre.sum_axis(Axis(0));
        }
        let dx = dpre.dot(&lw.mlp_in.t());
        let dr = match &mt.inv_std {
            Some(inv) => layer_norm_backward(&dx.view(), &mt.x.view(), inv),
            None => dx,
        };
        residual_grad += &dr;
        port_grads[topology.port_index(DestPort::Mlp { layer })] = dr;

        // heads are mutually parallel: all read the residual gradient
        // accumulated so far, and their own port gradients join it only
        // once the whole layer is done
        let mut layer_sum = Array2::zeros((s, c.d_model));
        for head in 0..c.n_heads {
            let hw = &w.layers[layer].heads[head];
            let ht = &trace.heads[head_trace_index(&topology, layer, head)];
            let g = &residual_grad;

            let dz = g.dot(&hw.w_o.t());
            let dp = dz.dot(&ht.v.t());
            let dv = ht.probs.t().dot(&dz);

            // softmax backward per causal row
            let mut dscores = Array2::zeros((s, s));
            for i in 0..s {
                let mut dot = 0.0;
                for j in 0..=i {
                    dot += dp[[i, j]] * ht.probs[[i, j]];
                }
                for j in 0..=i {
                    dscores[[i, j]] = ht.probs[[i, j]] * (dp[[i, j]] - dot);
                }
            }
            let dq = dscores.dot(&ht.k) * scale;
            let dk = dscores.t().dot(&ht.q) * scale;

            {
                let pt = params.tensors_mut();
                let hp = &mut pt.layers[layer].heads[head];
                hp.w_o += &ht.z.t().dot(g);
                hp.w_q += &ht.xq.t().dot(&dq);
                hp.w_k += &ht.xk.t().dot(&dk);
                hp.w_v += &ht.xv.t().dot(&dv);
            }

            let dxq = dq.dot(&hw.w_q.t());
            let dxk = dk.dot(&hw.w_k.t());
            let dxv = dv.dot(&hw.w_v.t());
            let back = |dx: Array2<f64>, x: &Array2<f64>, inv: &Option<ndarray::Array1<f64>>| {
                match inv {
                    Some(inv) => layer_norm_backward(&dx.view(), &x.view(), inv),
                    None => dx,
                }
            };
            let drq = back(dxq, &ht.xq, &ht.inv_std_q);
            let drk = back(dxk, &ht.xk, &ht.inv_std_k);
            let drv = back(dxv, &ht.xv, &ht.inv_std_v);
            layer_sum += &drq;
            layer_sum += &drk;
            layer_sum += &drv;
            port_grads[topology.port_index(DestPort::Head { layer, head, slot: Qkv::Q })] = drq;
            port_grads[topology.port_index(DestPort::Head { layer, head, slot: Qkv::K })] = drk;
            port_grads[topology.port_index(DestPort::Head { layer, head, slot: Qkv::V })] = drv;
        }
        residual_grad += &layer_sum;
    }

    // input node parameters
    {
        let pt = params.tensors_mut();
        for (pos, &tok) in trace.tokens.iter().enumerate() {
            let g = residual_grad.row(pos);
            let mut e = pt.token_embed.row_mut(tok as usize);
            e += &g;
            let mut p = pt.pos_embed.row_mut(pos);
            p += &g;
        }
    }

    Gradients::new(topology, port_grads, params)
}
