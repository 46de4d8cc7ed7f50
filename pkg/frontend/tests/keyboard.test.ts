import { describe, expect, it } from "vitest";

import { labelForKey } from "../src/keyboard.js";

describe("labelForKey", () => {
  it("maps digit keys to class labels", () => {
    expect(labelForKey("0", 3)).toBe(0);
    expect(labelForKey("2", 3)).toBe(2);
  });

  it("rejects digits at or above the class count", () => {
    expect(labelForKey("3", 3)).toBeNull();
    expect(labelForKey("9", 3)).toBeNull();
  });

  it("ignores non-digit keys", () => {
    expect(labelForKey("a", 10)).toBeNull();
    expect(labelForKey("Enter", 10)).toBeNull();
    expect(labelForKey("-1", 10)).toBeNull();
    expect(labelForKey("10", 10)).toBeNull();
  });

  it("handles zero classes", () => {
    expect(labelForKey("0", 0)).toBeNull();
  });
});
