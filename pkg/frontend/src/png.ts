/** PNG patch loading; extractor input is fixed at 224 x 224 RGB. */

import * as fs from 'fs'
import { PNG } from 'pngjs'

export const PATCH_SIZE = 224

export class BadPatchSize extends Error {}

export interface RgbPatch {
  width: number
  height: number
  /** RGB triples, row-major, alpha stripped. */
  pixels: Uint8Array
}

export function readPatch(file: string): RgbPatch {
  const png = PNG.sync.read(fs.readFileSync(file))
  if (png.width !== PATCH_SIZE || png.height !== PATCH_SIZE) {
    throw new BadPatchSize(
      `${file}: ${png.width}x${png.height}, expected ${PATCH_SIZE}x${PATCH_SIZE}`,
    )
  }
  const n = png.width * png.height
  const pixels = new Uint8Array(n * 3)
  for (let i = 0; i < n; i++) {
    pixels[i * 3] = png.data[i * 4]
    pixels[i * 3 + 1] = png.data[i * 4 + 1]
    pixels[i * 3 + 2] = png.data[i * 4 + 2]
  }
  return { width: png.width, height: png.height, pixels }
}

export function writePng(patch: RgbPatch, file: string): void {
  const png = new PNG({ width: patch.width, height: patch.height })
  const n = patch.width * patch.height
  for (let i = 0; i < n; i++) {
    png.data[i * 4] = patch.pixels[i * 3]
    png.data[i * 4 + 1] = patch.pixels[i * 3 + 1]
    png.data[i * 4 + 2] = patch.pixels[i * 3 + 2]
    png.data[i * 4 + 3] = 255
  }
  fs.writeFileSync(file, PNG.sync.write(png))
}
