/**
 * Provider-key storage in a browser cookie.
 *
 * The key stays client-side: its only other appearance is the
 * X-Provider-Key header on run requests.
 */

const COOKIE_NAME = "kmgpt_provider_key";

export function setProviderKey(key: string, days = 30): void {
  if (typeof document === "undefined") return;
  const expires = new Date(Date.now() + days * 86400_000).toUTCString();
  document.cookie = `${COOKIE_NAME}=${encodeURIComponent(key)}; expires=${expires}; path=/; SameSite=Strict`;
}

export function getProviderKey(): string {
  if (typeof document === "undefined") return "";
  for (const part of document.cookie.split(";")) {
    const [name, ...rest] = part.trim().split("=");
    if (name === COOKIE_NAME) return decodeURIComponent(rest.join("="));
  }
  return "";
}

export function clearProviderKey(): void {
  if (typeof document === "undefined") return;
  document.cookie = `${COOKIE_NAME}=; expires=Thu, 01 Jan 1970 00:00:00 GMT; path=/`;
}
