/** Digit-key labeling: key "0".."9" maps to that class when it exists. */
export function labelForKey(key: string, numClasses: number): number | null {
  if (!/^[0-9]$/.test(key)) {
    return null;
  }
  const label = Number(key);
  return label < numClasses ? label : null;
}
