/** Poll until a DOM or state condition holds; throws on timeout. */
export async function until(
  check: () => boolean | Promise<boolean>,
  timeoutMs = 5000,
  label = "condition",
): Promise<void> {
  const start = Date.now();
  while (!(await check())) {
    if (Date.now() - start > timeoutMs) {
      throw new Error(`timed out waiting for ${label}`);
    }
    await new Promise((resolve) => setTimeout(resolve, 20));
  }
}

export function click(node: Element | null): void {
  if (!node) throw new Error("click target missing");
  (node as HTMLElement).click();
}
