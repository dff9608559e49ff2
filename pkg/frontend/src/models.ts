/**
 * Fixture architecture descriptors and their tfjs realizations.
 *
 * Descriptors mirror the interchange-bundle layer kinds one to one, so the
 * exporter can walk spec and trained model in lockstep.  tfjs computes in
 * height-width-channel order; all layout reconciliation happens at export.
 */

import * as tf from '@tensorflow/tfjs';

export type FixtureLayer =
  | { kind: 'conv2d'; filters: number; kernel: number; padding: 'same' | 'valid' }
  | { kind: 'batchnorm2d' }
  | { kind: 'relu' }
  | { kind: 'maxpool2d'; kernel: number }
  | { kind: 'flatten' }
  | { kind: 'linear'; units: number };

export interface DatasetSpec {
  trainCount: number;
  calibCount: number;
  evalCount: number;
  pinnedCount: number;
  side: number;
  scale: number;
  sigma: number;
  seed: number;
}

export interface FixtureSpec {
  name: string;
  /** true: samples are flat vectors [side*side]; false: [1, side, side] */
  flatInput: boolean;
  layers: FixtureLayer[];
  dataset: DatasetSpec;
  epochs: number;
  batchSize: number;
  learningRate: number;
  seed: number;
}

const KNOWN_KINDS = new Set([
  'conv2d', 'batchnorm2d', 'relu', 'maxpool2d', 'flatten', 'linear',
]);

export function validateSpec(spec: FixtureSpec): void {
  for (const layer of spec.layers) {
    if (!KNOWN_KINDS.has(layer.kind)) {
      throw new Error(`unsupported layer kind in fixture spec: ${layer.kind}`);
    }
    if (layer.kind === 'conv2d' && layer.padding === 'same' && layer.kernel % 2 === 0) {
      throw new Error('same-padded conv requires an odd kernel');
    }
  }
}

export function buildModel(spec: FixtureSpec): tf.Sequential {
  validateSpec(spec);
  const model = tf.sequential();
  const side = spec.dataset.side;
  let first = true;
  spec.layers.forEach((layer, i) => {
    const inputShape = first
      ? (spec.flatInput ? [side * side] : [side, side, 1])
      : undefined;
    first = false;
    switch (layer.kind) {
      case 'conv2d':
        model.add(tf.layers.conv2d({
          filters: layer.filters,
          kernelSize: layer.kernel,
          padding: layer.padding,
          strides: 1,
          useBias: true,
          kernelInitializer: tf.initializers.glorotUniform({ seed: spec.seed + i }),
          ...(inputShape ? { inputShape } : {}),
        }));
        break;
      case 'batchnorm2d':
        model.add(tf.layers.batchNormalization({}));
        break;
      case 'relu':
        model.add(tf.layers.activation(
          { activation: 'relu', ...(inputShape ? { inputShape } : {}) }));
        break;
      case 'maxpool2d':
        model.add(tf.layers.maxPooling2d({ poolSize: layer.kernel }));
        break;
      case 'flatten':
        model.add(tf.layers.flatten());
        break;
      case 'linear':
        model.add(tf.layers.dense({
          units: layer.units,
          kernelInitializer: tf.initializers.glorotUniform({ seed: spec.seed + i }),
          ...(inputShape ? { inputShape } : {}),
        }));
        break;
    }
  });
  return model;
}

export const TINY_MLP: FixtureSpec = {
  name: 'tiny_mlp',
  flatInput: true,
  layers: [
    { kind: 'linear', units: 64 },
    { kind: 'relu' },
    { kind: 'linear', units: 10 },
  ],
  dataset: {
    trainCount: 8192, calibCount: 64, evalCount: 512, pinnedCount: 16,
    side: 28, scale: 4, sigma: 0.25, seed: 1101,
  },
  epochs: 20,
  batchSize: 128,
  learningRate: 2e-3,
  seed: 41,
};

export const TINY_CNN: FixtureSpec = {
  name: 'tiny_cnn',
  flatInput: false,
  layers: [
    { kind: 'conv2d', filters: 8, kernel: 3, padding: 'same' },
    { kind: 'batchnorm2d' },
    { kind: 'relu' },
    { kind: 'maxpool2d', kernel: 2 },
    { kind: 'conv2d', filters: 16, kernel: 3, padding: 'same' },
    { kind: 'batchnorm2d' },
    { kind: 'relu' },
    { kind: 'maxpool2d', kernel: 2 },
    { kind: 'flatten' },
    { kind: 'linear', units: 10 },
  ],
  dataset: {
    trainCount: 4096, calibCount: 64, evalCount: 512, pinnedCount: 16,
    side: 12, scale: 2, sigma: 0.25, seed: 1202,
  },
  epochs: 14,
  batchSize: 128,
  learningRate: 2e-3,
  seed: 43,
};
