/**
 * Writer (and reader, for tests) of the .h2rf patch-feature container.
 *
 * Layout, all little-endian: magic "H2RF", u32 version, u32-length-prefixed
 * UTF-8 patient id and extractor tag, u32 N, u32 F, then N*F float32 values
 * row-major. This must stay byte-compatible with the pipeline's reader.
 */

import * as fs from 'fs'
import * as path from 'path'

export const H2RF_MAGIC = 'H2RF'
export const H2RF_VERSION = 1

export interface FeatureSet {
  patientId: string
  extractorTag: string
  nPatches: number
  nFeatures: number
  values: Float32Array // row-major, nPatches * nFeatures
}

export function encodeH2rf(set: FeatureSet): Buffer {
  if (set.values.length !== set.nPatches * set.nFeatures) {
    throw new Error(
      `values length ${set.values.length} != ${set.nPatches}x${set.nFeatures}`,
    )
  }
  const pid = Buffer.from(set.patientId, 'utf-8')
  const tag = Buffer.from(set.extractorTag, 'utf-8')
  const header = Buffer.alloc(4 + 4 + 4 + pid.length + 4 + tag.length + 8)
  let off = 0
  header.write(H2RF_MAGIC, off, 'ascii')
  off += 4
  off = header.writeUInt32LE(H2RF_VERSION, off)
  off = header.writeUInt32LE(pid.length, off)
  off += pid.copy(header, off)
  off = header.writeUInt32LE(tag.length, off)
  off += tag.copy(header, off)
  off = header.writeUInt32LE(set.nPatches, off)
  header.writeUInt32LE(set.nFeatures, off)
  const payload = Buffer.alloc(set.values.length * 4)
  for (let i = 0; i < set.values.length; i++) {
    payload.writeFloatLE(set.values[i], i * 4)
  }
  return Buffer.concat([header, payload])
}

export function decodeH2rf(data: Buffer): FeatureSet {
  if (data.length < 8 || data.toString('ascii', 0, 4) !== H2RF_MAGIC) {
    throw new Error('bad magic')
  }
  const version = data.readUInt32LE(4)
  if (version !== H2RF_VERSION) throw new Error(`unsupported version ${version}`)
  let off = 8
  const readString = (): string => {
    const len = data.readUInt32LE(off)
    off += 4
    const s = data.toString('utf-8', off, off + len)
    off += len
    return s
  }
  const patientId = readString()
  const extractorTag = readString()
  const nPatches = data.readUInt32LE(off)
  const nFeatures = data.readUInt32LE(off + 4)
  off += 8
  const expected = off + 4 * nPatches * nFeatures
  if (data.length !== expected) {
    throw new Error(`expected ${expected} bytes, file has ${data.length}`)
  }
  const values = new Float32Array(nPatches * nFeatures)
  for (let i = 0; i < values.length; i++) {
    values[i] = data.readFloatLE(off + i * 4)
  }
  return { patientId, extractorTag, nPatches, nFeatures, values }
}

/** Write via a temp file in the same directory, then rename into place. */
export function writeH2rfAtomic(set: FeatureSet, target: string): void {
  const tmp = path.join(
    path.dirname(target),
    `.${path.basename(target)}.tmp-${process.pid}`,
  )
  fs.writeFileSync(tmp, encodeH2rf(set))
  fs.renameSync(tmp, target)
}
