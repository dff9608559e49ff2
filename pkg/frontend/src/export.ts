/**
 * Extracts trained tfjs weights into the bundle layout and records
 * per-layer reference activations on pinned inputs.
 *
 * Layout reconciliation:
 *  - conv kernels [kh, kw, inCh, outCh] -> [outCh, inCh, kh, kw]
 *  - dense kernels [in, out] -> [out, in]; when the dense layer follows a
 *    flatten over spatial maps, its input columns are also permuted from
 *    tfjs height-width-channel flattening to the bundle's
 *    channel-height-width flattening
 *  - rank-4 activations [n, h, w, c] -> [n, c, h, w]
 */

import * as tf from '@tensorflow/tfjs';

import { hwcToChwIndices, LayerEntry, ReferenceLayer } from './bundle';
import { FixtureLayer, FixtureSpec, validateSpec } from './models';

interface SpatialShape {
  h: number;
  w: number;
  c: number;
}

/** Walk the spec tracking the spatial shape seen by each layer's input. */
function spatialShapes(spec: FixtureSpec): (SpatialShape | null)[] {
  let shape: SpatialShape | null = spec.flatInput
    ? null
    : { h: spec.dataset.side, w: spec.dataset.side, c: 1 };
  const inShapes: (SpatialShape | null)[] = [];
  for (const layer of spec.layers) {
    inShapes.push(shape ? { ...shape } : null);
    if (!shape) continue;
    if (layer.kind === 'conv2d') {
      if (layer.padding === 'valid') {
        shape = { h: shape.h - layer.kernel + 1, w: shape.w - layer.kernel + 1, c: layer.filters };
      } else {
        shape = { h: shape.h, w: shape.w, c: layer.filters };
      }
    } else if (layer.kind === 'maxpool2d') {
      shape = {
        h: Math.floor(shape.h / layer.kernel),
        w: Math.floor(shape.w / layer.kernel),
        c: shape.c,
      };
    } else if (layer.kind === 'flatten' || layer.kind === 'linear') {
      shape = null;
    }
  }
  return inShapes;
}

function transposeConvKernel(kernel: tf.Tensor): Float32Array {
  // [kh, kw, ic, oc] -> [oc, ic, kh, kw]
  return tf.tidy(() => kernel.transpose([3, 2, 0, 1]).dataSync() as Float32Array);
}

function transposeDenseKernel(
  kernel: tf.Tensor, flattenShape: SpatialShape | null,
): Float32Array {
  return tf.tidy(() => {
    let k = kernel; // [in, out]
    if (flattenShape) {
      const { h, w, c } = flattenShape;
      const perm = hwcToChwIndices(h, w, c);
      k = tf.gather(k, Array.from(perm), 0);
    }
    return k.transpose([1, 0]).dataSync() as Float32Array; // [out, in]
  });
}

export function bundleInputShape(spec: FixtureSpec): number[] {
  const side = spec.dataset.side;
  return spec.flatInput ? [side * side] : [1, side, side];
}

/**
 * Map the trained model onto bundle layer entries, spec layer by layer.
 * The tfjs model must have been built from the same spec.
 */
export function exportLayers(spec: FixtureSpec, model: tf.Sequential): LayerEntry[] {
  validateSpec(spec);
  if (model.layers.length !== spec.layers.length) {
    throw new Error(
      `model has ${model.layers.length} layers, spec has ${spec.layers.length}`);
  }
  const inShapes = spatialShapes(spec);
  let lastSpatial: SpatialShape | null = null;
  const entries: LayerEntry[] = [];
  spec.layers.forEach((layer: FixtureLayer, i) => {
    const tfl = model.layers[i];
    switch (layer.kind) {
      case 'conv2d': {
        const [kernel, bias] = tfl.getWeights();
        const [kh, kw, ic, oc] = kernel.shape;
        entries.push({
          kind: 'conv2d',
          weight: transposeConvKernel(kernel),
          weightShape: [oc, ic, kh, kw],
          bias: bias.dataSync() as Float32Array,
          biasShape: [oc],
          stride: 1,
          padding: layer.padding === 'same' ? (layer.kernel - 1) / 2 : 0,
        });
        break;
      }
      case 'batchnorm2d': {
        const [gamma, beta, mean, variance] = tfl.getWeights();
        entries.push({
          kind: 'batchnorm2d',
          gamma: gamma.dataSync() as Float32Array,
          beta: beta.dataSync() as Float32Array,
          mean: mean.dataSync() as Float32Array,
          variance: variance.dataSync() as Float32Array,
          epsilon: (tfl as unknown as { epsilon: number }).epsilon ?? 1e-3,
        });
        break;
      }
      case 'relu':
        entries.push({ kind: 'relu' });
        break;
      case 'maxpool2d':
        entries.push({ kind: 'maxpool2d', kernel: layer.kernel, stride: layer.kernel });
        break;
      case 'flatten':
        lastSpatial = inShapes[i];
        entries.push({ kind: 'flatten' });
        break;
      case 'linear': {
        const [kernel, bias] = tfl.getWeights();
        const [inDim, outDim] = kernel.shape;
        entries.push({
          kind: 'linear',
          weight: transposeDenseKernel(kernel, lastSpatial),
          weightShape: [outDim, inDim],
          bias: bias.dataSync() as Float32Array,
          biasShape: [outDim],
        });
        lastSpatial = null;
        break;
      }
    }
  });
  return entries;
}

/**
 * Per-layer activations on pinned inputs, already in bundle layout.
 * Returns entries aligned with the bundle's layer indices.
 */
export function exportReferenceActivations(
  spec: FixtureSpec, model: tf.Sequential, pinned: tf.Tensor,
): ReferenceLayer[] {
  const refs: ReferenceLayer[] = [];
  const count = pinned.shape[0] as number;
  let x = pinned;
  const owned: tf.Tensor[] = [];
  spec.layers.forEach((layer, i) => {
    const y = model.layers[i].apply(x) as tf.Tensor;
    owned.push(y);
    let values: Float32Array;
    let shape: number[];
    if (y.rank === 4) {
      const [, h, w, c] = y.shape as number[];
      const t = y.transpose([0, 3, 1, 2]);
      values = t.dataSync() as Float32Array;
      t.dispose();
      shape = [c, h, w];
    } else if (layer.kind === 'flatten' && x.rank === 4) {
      const t = x.transpose([0, 3, 1, 2]);
      values = t.dataSync() as Float32Array;
      t.dispose();
      shape = [values.length / count];
    } else {
      values = y.dataSync() as Float32Array;
      shape = [(y.shape[1] ?? 1) as number];
    }
    refs.push({ layer: i, shape, values });
    x = y;
  });
  owned.forEach((t) => t.dispose());
  return refs;
}
