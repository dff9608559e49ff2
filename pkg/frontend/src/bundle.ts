/**
 * Writers for the spikeforge interchange formats:
 *
 *   model.json + weights.bin   layer manifest + concatenated LE float32 blob
 *   calib.json + calib.bin     sample descriptor + raw LE float32 payload
 *   ref.json   + ref.bin       pinned inputs + per-layer activations
 *
 * Tensor layout is row-major with conv weights as [outCh, inCh, kh, kw],
 * dense weights as [out, in], and image data as [channels, height, width];
 * offsets are ascending byte positions into the blob.
 */

import * as fs from 'fs';
import * as path from 'path';

export const FORMAT_VERSION = '1.0';

export type LayerEntry =
  | {
      kind: 'conv2d';
      weight: Float32Array; weightShape: number[];
      bias: Float32Array; biasShape: number[];
      stride: number; padding: number;
    }
  | {
      kind: 'linear';
      weight: Float32Array; weightShape: number[];
      bias: Float32Array; biasShape: number[];
    }
  | {
      kind: 'batchnorm2d';
      gamma: Float32Array; beta: Float32Array;
      mean: Float32Array; variance: Float32Array;
      epsilon: number;
    }
  | { kind: 'maxpool2d' | 'avgpool2d'; kernel: number; stride: number }
  | { kind: 'relu' | 'flatten' };

export const SUPPORTED_KINDS = new Set([
  'conv2d', 'linear', 'relu', 'batchnorm2d', 'maxpool2d', 'avgpool2d', 'flatten',
]);

function product(dims: number[]): number {
  return dims.reduce((a, b) => a * b, 1);
}

/** Little-endian float32 serialization, independent of host byte order. */
export function toLeBytes(values: Float32Array): Buffer {
  const buf = Buffer.alloc(values.length * 4);
  for (let i = 0; i < values.length; i++) {
    buf.writeFloatLE(values[i], i * 4);
  }
  return buf;
}

class BlobBuilder {
  private chunks: Buffer[] = [];
  private offset = 0;

  put(values: Float32Array, shape: number[]): number {
    if (values.length !== product(shape)) {
      throw new Error(`tensor length ${values.length} != shape ${shape}`);
    }
    const start = this.offset;
    const raw = toLeBytes(values);
    this.chunks.push(raw);
    this.offset += raw.length;
    return start;
  }

  bytes(): Buffer {
    return Buffer.concat(this.chunks);
  }
}

export function writeModelBundle(
  dir: string, inputShape: number[], layers: LayerEntry[],
): void {
  fs.mkdirSync(dir, { recursive: true });
  const blob = new BlobBuilder();
  const entries: Record<string, unknown>[] = [];
  for (const layer of layers) {
    if (!SUPPORTED_KINDS.has(layer.kind)) {
      throw new Error(`unsupported layer kind ${layer.kind}`);
    }
    switch (layer.kind) {
      case 'conv2d':
        entries.push({
          kind: 'conv2d',
          weight_shape: layer.weightShape,
          bias_shape: layer.biasShape,
          weight_offset: blob.put(layer.weight, layer.weightShape),
          bias_offset: blob.put(layer.bias, layer.biasShape),
          stride: layer.stride,
          padding: layer.padding,
        });
        break;
      case 'linear':
        entries.push({
          kind: 'linear',
          weight_shape: layer.weightShape,
          bias_shape: layer.biasShape,
          weight_offset: blob.put(layer.weight, layer.weightShape),
          bias_offset: blob.put(layer.bias, layer.biasShape),
        });
        break;
      case 'batchnorm2d': {
        const n = layer.gamma.length;
        entries.push({
          kind: 'batchnorm2d',
          num_features: n,
          gamma_offset: blob.put(layer.gamma, [n]),
          beta_offset: blob.put(layer.beta, [n]),
          mean_offset: blob.put(layer.mean, [n]),
          var_offset: blob.put(layer.variance, [n]),
          epsilon: layer.epsilon,
        });
        break;
      }
      case 'maxpool2d':
      case 'avgpool2d':
        entries.push({ kind: layer.kind, kernel: layer.kernel, stride: layer.stride });
        break;
      default:
        entries.push({ kind: layer.kind });
    }
  }
  const manifest = {
    format_version: FORMAT_VERSION,
    input_shape: inputShape,
    layers: entries,
  };
  fs.writeFileSync(path.join(dir, 'model.json'), JSON.stringify(manifest, null, 1) + '\n');
  fs.writeFileSync(path.join(dir, 'weights.bin'), blob.bytes());
}

export function writeCalibration(
  dir: string, name: string, inputs: Float32Array, shape: number[],
  labels?: Int32Array,
): void {
  fs.mkdirSync(dir, { recursive: true });
  const per = product(shape);
  if (inputs.length % per !== 0) {
    throw new Error(`payload length ${inputs.length} not a multiple of ${per}`);
  }
  const count = inputs.length / per;
  const desc: Record<string, unknown> = {
    format_version: FORMAT_VERSION,
    count,
    shape,
    dtype: 'float32',
    data_file: `${name}.bin`,
  };
  if (labels) {
    if (labels.length !== count) {
      throw new Error(`${labels.length} labels for ${count} samples`);
    }
    desc.labels = Array.from(labels);
  }
  fs.writeFileSync(path.join(dir, `${name}.json`), JSON.stringify(desc) + '\n');
  fs.writeFileSync(path.join(dir, `${name}.bin`), toLeBytes(inputs));
}

export interface ReferenceLayer {
  layer: number;
  shape: number[];
  values: Float32Array;
}

export function writeReference(
  dir: string, inputs: Float32Array, inputShape: number[], count: number,
  layers: ReferenceLayer[],
): void {
  fs.mkdirSync(dir, { recursive: true });
  if (inputs.length !== count * product(inputShape)) {
    throw new Error('pinned input payload does not match count * input_shape');
  }
  const chunks: Buffer[] = [toLeBytes(inputs)];
  let offset = chunks[0].length;
  const entries: Record<string, unknown>[] = [];
  for (const ref of layers) {
    if (ref.values.length !== count * product(ref.shape)) {
      throw new Error(`layer ${ref.layer} activations do not match count * shape`);
    }
    entries.push({ layer: ref.layer, shape: ref.shape, offset });
    const raw = toLeBytes(ref.values);
    chunks.push(raw);
    offset += raw.length;
  }
  const desc = {
    format_version: FORMAT_VERSION,
    count,
    input_shape: inputShape,
    inputs_offset: 0,
    data_file: 'ref.bin',
    layers: entries,
  };
  fs.writeFileSync(path.join(dir, 'ref.json'), JSON.stringify(desc) + '\n');
  fs.writeFileSync(path.join(dir, 'ref.bin'), Buffer.concat(chunks));
}

/** Index permutation taking height-width-channel order to channel-height-width. */
export function hwcToChwIndices(h: number, w: number, c: number): Int32Array {
  const map = new Int32Array(c * h * w);
  let chw = 0;
  for (let ci = 0; ci < c; ci++) {
    for (let y = 0; y < h; y++) {
      for (let x = 0; x < w; x++) {
        map[chw++] = (y * w + x) * c + ci;
      }
    }
  }
  return map;
}

/** Reorder a [count, h, w, c] batch into [count, c, h, w], flattened. */
export function nhwcToNchw(
  values: Float32Array, count: number, h: number, w: number, c: number,
): Float32Array {
  const map = hwcToChwIndices(h, w, c);
  const per = h * w * c;
  const out = new Float32Array(values.length);
  for (let i = 0; i < count; i++) {
    const base = i * per;
    for (let j = 0; j < per; j++) {
      out[base + j] = values[base + map[j]];
    }
  }
  return out;
}
